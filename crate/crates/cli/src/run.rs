use std::fs;
use std::path::{Path, PathBuf};

use rbpn_core::config::{load_config_file, ModelConfig, ScaleFactor, TrainConfig};
use rbpn_core::context::{plan_context, plan_context_clamped};
use rbpn_core::dataset::{degrade, load_dataset, SequenceRecord, SyntheticSequence, SyntheticSpec, TrainSample};
use rbpn_core::evaluation::ablation::{ablation_harness, AblationGrid, AblationReport, ToyTrainConfig};
use rbpn_core::evaluation::plot::{bar_chart, line_chart, write_svg};
use rbpn_core::evaluation::report::{text_table, write_csv, write_json};
use rbpn_core::evaluation::{evaluate_dataset, DatasetReport, EvalProtocol, Method, TierSpec};
use rbpn_core::flow::{flow_path, write_flo, ExternalFlow, FlowKey, FlowProvider, PrecomputedFlow, TierThresholds, ZeroFlow};
use rbpn_core::model::{Architecture, VsrModel};
use rbpn_core::nn::archive::DType;
use rbpn_core::training::{RecordSamples, Trainer};
use rbpn_core::{Error, Frame, Result};
use serde::Deserialize;

use crate::args::*;

pub struct Globals {
    pub json: bool,
    pub seed: Option<u64>,
    pub dataset_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Globals {
    fn out_dir(&self) -> Result<&Path> {
        let dir = self
            .out_dir
            .as_deref()
            .ok_or_else(|| Error::config("out_dir", "--out-dir is required for this command"))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir)
    }

    fn dataset_root(&self) -> Result<&Path> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| Error::config("dataset_root", "pass --dataset-root or set RBPN_DATASET_ROOT"))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        json: cli.json,
        seed: cli.seed,
        dataset_root: cli.dataset_root,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::PrepareData(a) => prepare_data(&g, a),
        Command::ComputeFlow(a) => compute_flow(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Infer(a) => infer(&g, a),
        Command::Eval(a) => eval(&g, a),
        Command::Ablate(a) => ablate(&g, a),
        Command::Inspect(a) => inspect(&g, a),
        Command::Plot(a) => plot(&g, a),
    }
}

fn configs(m: &ModelArgs, t: Option<&TrainFlags>, seed: Option<u64>) -> Result<(ModelConfig, TrainConfig)> {
    let (mut model, mut train) = match &m.config {
        Some(path) => load_config_file(path)?,
        None => (ModelConfig::default(), TrainConfig::default()),
    };
    if let Some(v) = m.size_variant {
        model = model.with_size_variant(v);
    }
    macro_rules! set {
        ($dst:expr, $($field:ident),*) => {
            $(if let Some(v) = $field { $dst.$field = v; })*
        };
    }
    let ModelArgs {
        scale,
        context_n,
        c_l,
        c_m,
        c_h,
        sisr_stages,
        resnet_blocks,
        order,
        pf_sequence,
        integration,
        use_flow,
        residual_learning,
        ..
    } = m.clone();
    if let Some(s) = scale {
        model.scale = ScaleFactor::new(s)?;
    }
    set!(model, context_n, c_l, c_m, c_h, sisr_stages, resnet_blocks, order, pf_sequence, integration, use_flow, residual_learning);
    if let Some(flags) = t.cloned() {
        let TrainFlags {
            batch_size,
            lr_initial,
            lr_decay_factor,
            lr_decay_epoch,
            total_epochs,
            adam_beta1,
            patch_lr,
        } = flags;
        set!(train, batch_size, lr_initial, lr_decay_factor, lr_decay_epoch, total_epochs, adam_beta1, patch_lr);
    }
    if let Some(seed) = seed {
        train.seed = seed;
    }
    Ok((model, train))
}

fn flow_provider(data: &DataArgs, needed: bool) -> Result<Box<dyn FlowProvider>> {
    match (&data.flow_dir, &data.flow_cmd) {
        (Some(dir), _) => Ok(Box::new(PrecomputedFlow::new(dir)?)),
        (None, Some(cmd)) => Ok(Box::new(ExternalFlow::from_command_line(cmd)?)),
        (None, None) if needed => Err(Error::config(
            "flow_dir",
            "this model uses flow: pass --flow-dir or --flow-cmd",
        )),
        (None, None) => Ok(Box::new(ZeroFlow)),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn frame_name(i: usize) -> String {
    format!("{i:04}.png")
}

fn prepare_data(g: &Globals, a: PrepareArgs) -> Result<()> {
    let out = g.out_dir()?;
    let s = ScaleFactor::new(a.scale)?;
    let mut written = Vec::new();
    if let Some(count) = a.synthetic {
        let spec = SyntheticSpec::small(a.height, a.width, a.frames);
        let seed = g.seed.unwrap_or(0);
        for i in 0..count {
            let seq = SyntheticSequence::generate(&spec, seed.wrapping_add(i as u64));
            let dir = out.join(format!("synth_{i:04}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (t, f) in seq.hr.iter().enumerate() {
                f.save_png(&dir.join(frame_name(t)))?;
            }
            written.push(serde_json::json!({"id": dir.file_name().unwrap().to_string_lossy(), "frames": seq.hr.len(), "velocity": seq.velocity}));
        }
    } else {
        let root = g.dataset_root()?;
        let records = load_dataset(a.data.kind, root, a.data.list.as_deref(), 1)?;
        for rec in &records {
            let dir = out.join(&rec.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (t, path) in rec.frames.iter().enumerate() {
                let lr = degrade(&Frame::load_png(path)?.mod_crop(s.get())?, s)?;
                lr.save_png(&dir.join(frame_name(t)))?;
            }
            written.push(serde_json::json!({"id": rec.id, "frames": rec.len()}));
        }
    }
    let summary = serde_json::json!({"sequences": written, "scale": s, "out_dir": out});
    if g.json {
        print_json(&summary)
    } else {
        println!("wrote {} sequence(s) to {}", written.len(), out.display());
        Ok(())
    }
}

fn load_lr_frames(rec: &SequenceRecord, lr_input: bool, s: ScaleFactor) -> Result<Vec<Frame>> {
    rec.frames
        .iter()
        .map(|p| {
            let f = Frame::load_png(p)?;
            if lr_input {
                Ok(f)
            } else {
                degrade(&f.mod_crop(s.get())?, s)
            }
        })
        .collect()
}

fn compute_flow(g: &Globals, a: FlowArgs) -> Result<()> {
    let out = g.out_dir()?;
    let (model, _) = configs(&a.model, None, g.seed)?;
    let cfg = model.validate()?;
    let cmd = a
        .data
        .flow_cmd
        .as_deref()
        .ok_or_else(|| Error::config("flow_cmd", "--flow-cmd is required"))?;
    let ext = ExternalFlow::from_command_line(cmd)?;
    let records = load_dataset(a.data.kind, g.dataset_root()?, a.data.list.as_deref(), 1)?;
    let seed = g.seed.unwrap_or(0);
    let mut count = 0usize;
    for rec in &records {
        let lr = load_lr_frames(rec, a.lr_input, cfg.scale)?;
        for t in 0..lr.len() {
            let plan = plan_context_clamped(t, cfg.context_n, cfg.order, cfg.pf_sequence, seed, lr.len())?;
            for (&k, &rep) in plan.neighbors.iter().zip(&plan.replicated) {
                let key = FlowKey {
                    seq: &rec.id,
                    target: t,
                    neighbor: k,
                };
                let path = flow_path(out, &key);
                if rep || path.is_file() {
                    continue;
                }
                let field = ext.estimate(&lr[k], &lr[t])?;
                fs::create_dir_all(path.parent().expect("flow path has a parent")).map_err(|e| Error::io(&path, e))?;
                write_flo(&field, &path)?;
                count += 1;
            }
        }
        if !g.json {
            eprintln!("{}: done", rec.id);
        }
    }
    if g.json {
        print_json(&serde_json::json!({"flows_written": count, "out_dir": out}))
    } else {
        println!("wrote {count} flow file(s) to {}", out.display());
        Ok(())
    }
}

fn synthetic_samples(count: usize, cfg: &ModelConfig, patch: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let reach = cfg.context_n;
    let side = (patch * cfg.scale.get()).max(16);
    let spec = SyntheticSpec::small(side, side, 2 * reach + 1);
    (0..count)
        .map(|i| {
            let seq = SyntheticSequence::generate(&spec, seed.wrapping_add(i as u64));
            let plan = plan_context(reach, cfg.context_n, cfg.order, cfg.pf_sequence, seed, seq.hr.len())?;
            seq.sample(&plan, cfg.scale)
        })
        .collect()
}

fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let out = g.out_dir()?.to_path_buf();
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::load_checkpoint(dir)?,
        None => {
            let (model, tcfg) = configs(&a.model, Some(&a.train), g.seed)?;
            let arch: Architecture = a.model.arch.parse()?;
            let cfg = model.validate()?;
            let net = VsrModel::new(arch, cfg, tcfg.seed)?;
            Trainer::new(net, tcfg)?
        }
    };
    let cfg = trainer.model.config().clone();
    let json = g.json;
    let ckpt = out.join("checkpoint");
    let mut on_epoch = |t: &Trainer, r: &rbpn_core::training::EpochReport| {
        t.save_checkpoint(&ckpt)?;
        if json {
            println!("{}", serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?);
        } else {
            println!("epoch {:>4}  lr {:.2e}  loss {:.6}  steps {}", r.epoch, r.lr, r.mean_loss, r.steps);
        }
        Ok(())
    };
    if let Some(count) = a.synthetic {
        let samples = synthetic_samples(count, &cfg, trainer.cfg.patch_lr, trainer.cfg.seed)?;
        trainer.fit(&samples, &mut on_epoch)?;
    } else {
        let records = load_dataset(a.data.kind, g.dataset_root()?, a.data.list.as_deref(), cfg.context_n + 1)?;
        let flows = flow_provider(&a.data, cfg.use_flow)?;
        let source = RecordSamples::new(records, cfg.clone(), flows, trainer.cfg.seed);
        trainer.fit(&source, &mut on_epoch)?;
    }
    trainer.model.save(&out.join("model"), DType::F32)?;
    if !json {
        println!("model written to {}", out.join("model").display());
    }
    Ok(())
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::Layout {
            path: dir.to_path_buf(),
            reason: "no PNG frames".into(),
        });
    }
    Ok(frames)
}

fn infer(g: &Globals, a: InferArgs) -> Result<()> {
    let out = g.out_dir()?;
    let model = VsrModel::load(&a.model)?;
    let cfg = model.config();
    let paths = list_frames(&a.input)?;
    let frames = paths.iter().map(|p| Frame::load_png(p)).collect::<Result<Vec<_>>>()?;
    let flows = flow_provider(&a.data, cfg.use_flow)?;
    let seq = a.input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let seed = g.seed.unwrap_or(0);
    for (t, path) in paths.iter().enumerate() {
        let plan = plan_context_clamped(t, cfg.context_n, cfg.order, cfg.pf_sequence, seed, frames.len())?;
        let neighbors: Vec<Frame> = plan.neighbors.iter().map(|&k| frames[k].clone()).collect();
        let fields = plan
            .neighbors
            .iter()
            .zip(&plan.replicated)
            .map(|(&k, &rep)| {
                if rep || !cfg.use_flow {
                    Ok(rbpn_core::FlowField::zeros(frames[t].height(), frames[t].width()))
                } else {
                    let key = FlowKey {
                        seq: &seq,
                        target: t,
                        neighbor: k,
                    };
                    flows.get(&key, &frames[t], &frames[k])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let sr = model.infer(&frames[t], &neighbors, &fields, false)?;
        let name = path.file_name().expect("listed files have names");
        sr.sr_frame.save_png(&out.join(name))?;
    }
    if g.json {
        print_json(&serde_json::json!({"frames": paths.len(), "out_dir": out}))
    } else {
        println!("wrote {} frame(s) to {}", paths.len(), out.display());
        Ok(())
    }
}

fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let root = g.dataset_root()?;
    let protocol = EvalProtocol::by_name(&a.protocol)?;
    let s = ScaleFactor::new(a.scale)?;
    let records = load_dataset(a.data.kind, root, a.data.list.as_deref(), 1)?;
    let seed = g.seed.unwrap_or(0);
    let loaded;
    let (method, needs_flow) = match a.method.as_str() {
        "bicubic" => (None, false),
        "model" => {
            let dir = a
                .model
                .as_deref()
                .ok_or_else(|| Error::config("model", "--method model needs --model <dir>"))?;
            loaded = VsrModel::load(dir)?;
            if loaded.config().scale != s {
                return Err(Error::config("scale", format!("model is {}, --scale is {s}", loaded.config().scale)));
            }
            let uses = loaded.config().use_flow;
            (Some(&loaded), uses)
        }
        other => return Err(Error::config("method", format!("unknown method {other:?}; use bicubic or model"))),
    };
    let flows = flow_provider(&a.data, needs_flow || a.tiers)?;
    let method = match method {
        None => Method::Bicubic,
        Some(model) => Method::Model {
            model,
            flows: flows.as_ref(),
            seed,
        },
    };
    let thresholds = match (a.slow_max, a.medium_max) {
        (None, None) => TierThresholds::DEFAULT,
        (s, m) => TierThresholds::new(
            s.unwrap_or(TierThresholds::DEFAULT.slow_max),
            m.unwrap_or(TierThresholds::DEFAULT.medium_max),
        )?,
    };
    let tiers = a.tiers.then(|| TierSpec {
        thresholds,
        flows: flows.as_ref(),
    });
    let mut report = evaluate_dataset(method, &records, &protocol, s, tiers)?;
    if let Some(name) = &a.dataset {
        report.method = format!("{} on {name}", report.method);
    }
    if let Some(out) = &g.out_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_csv(&report.records, &out.join("metrics.csv"))?;
        write_json(&report, &out.join("report.json"))?;
        fs::write(out.join("table.txt"), text_table(&report)).map_err(|e| Error::io(out, e))?;
        if !report.tiers.is_empty() {
            write_svg(&tier_chart(&report)?, &out.join("tiers.svg"))?;
        }
    }
    if g.json {
        println!("{}", rbpn_core::evaluation::report::to_json(&report)?);
    } else {
        print!("{}", text_table(&report));
    }
    Ok(())
}

fn tier_chart(report: &DatasetReport) -> Result<String> {
    let bars: Vec<(String, f64)> = report.tiers.iter().map(|t| (t.name.clone(), t.psnr)).collect();
    bar_chart("PSNR per motion tier", "PSNR (dB)", &bars)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct GridFile {
    grid: AblationGrid,
    toy: Option<ToyTrainConfig>,
}

fn ablate(g: &Globals, a: AblateArgs) -> Result<()> {
    let mut file = match &a.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<GridFile>(&text).map_err(|e| Error::Format {
                path: path.clone(),
                reason: e.to_string(),
            })?
        }
        None => GridFile::default(),
    };
    let grid = &mut file.grid;
    macro_rules! axis {
        ($($f:ident),*) => { $(if !a.$f.is_empty() { grid.$f = a.$f.clone(); })* };
    }
    axis!(n, order, use_flow, integration, size_variant, residual_learning);
    let mut toy = file.toy.unwrap_or_default();
    macro_rules! knob {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { toy.$f = v; })* };
    }
    knob!(channels, iterations, train_sequences, test_sequences, lr);
    if let Some(seed) = g.seed {
        toy.seed = seed;
    }
    let protocol = EvalProtocol::by_name(&a.protocol)?;
    let report = ablation_harness(&file.grid, &toy, &protocol)?;
    if let Some(out) = &g.out_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(out.join("ablation.json"), text).map_err(|e| Error::io(out, e))?;
        fs::write(out.join("ablation.txt"), report.text_table()).map_err(|e| Error::io(out, e))?;
        if !report.context_curve().is_empty() {
            write_svg(&report.context_plot()?, &out.join("context_curve.svg"))?;
        }
    }
    if g.json {
        print_json(&report)
    } else {
        print!("{}", report.text_table());
        Ok(())
    }
}

fn inspect(g: &Globals, a: InspectArgs) -> Result<()> {
    let model = match &a.model_dir {
        Some(dir) => VsrModel::load(dir)?,
        None => {
            let (cfg, _) = configs(&a.model, None, None)?;
            VsrModel::new(a.model.arch.parse()?, cfg.validate()?, g.seed.unwrap_or(0))?
        }
    };
    let costs = model.cost_breakdown(a.height, a.width);
    let macs = model.estimate_macs(a.height, a.width);
    if g.json {
        return print_json(&serde_json::json!({
            "architecture": model.architecture(),
            "config": **model.config(),
            "config_hash": model.config().fingerprint(),
            "input": [a.height, a.width],
            "subnets": costs,
            "total_params": model.param_count(),
            "macs": macs,
            "flops": model.estimate_flops(a.height, a.width),
        }));
    }
    let cfg = model.config();
    println!(
        "{}/{} {} {:?} {:?} (config {})",
        model.architecture(),
        cfg.context_n,
        cfg.scale,
        cfg.order,
        cfg.size_variant,
        cfg.fingerprint()
    );
    println!("{:<8} {:>12} {:>6} {:>14}", "subnet", "params", "calls", "GMAC total");
    for c in &costs {
        println!("{:<8} {:>12} {:>6} {:>14.2}", c.name, c.params, c.calls, c.macs() as f64 / 1e9);
    }
    println!("{:<8} {:>12} {:>6} {:>14.2}", "total", model.param_count(), "", macs as f64 / 1e9);
    println!(
        "input {}x{} LR: {:.1}k params, {:.1} GMAC, {:.1} GFLOP",
        a.width,
        a.height,
        model.param_count() as f64 / 1e3,
        macs as f64 / 1e9,
        model.estimate_flops(a.height, a.width) as f64 / 1e9
    );
    Ok(())
}

fn plot(g: &Globals, a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: a.report.clone(),
        reason: e.to_string(),
    })?;
    let bad = |reason: &str| Error::Format {
        path: a.report.clone(),
        reason: reason.into(),
    };
    let svg = if value.get("rows").is_some() {
        let report: AblationReport = serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?;
        report.context_plot()?
    } else if let Some(tiers) = value.get("tiers").and_then(|t| t.as_array()).filter(|t| !t.is_empty()) {
        let bars = tiers
            .iter()
            .map(|t| {
                Some((t.get("name")?.as_str()?.to_string(), t.get("psnr")?.as_f64()?))
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("tier entries need name and psnr"))?;
        bar_chart("PSNR per motion tier", "PSNR (dB)", &bars)?
    } else if let Some(seqs) = value.get("sequences").and_then(|t| t.as_array()) {
        let points = seqs
            .iter()
            .enumerate()
            .map(|(i, t)| Some((i as f64, t.get("psnr")?.as_f64()?)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("sequence entries need psnr"))?;
        line_chart("PSNR per sequence", "sequence index", "PSNR (dB)", &points)?
    } else {
        return Err(bad("not an eval or ablation report"));
    };
    let path = match a.out {
        Some(p) => p,
        None => g.out_dir()?.join("plot.svg"),
    };
    write_svg(&svg, &path)?;
    if g.json {
        print_json(&serde_json::json!({"svg": path}))
    } else {
        println!("wrote {}", path.display());
        Ok(())
    }
}
