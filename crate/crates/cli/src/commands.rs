use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use vgnn_core::eval::{
    baseline_historic_mean, baseline_last_value, forecast, metrics_table, run_ablation, run_variant, AblationRow,
    Experiment, Metrics, VariantSpec,
};
use vgnn_core::graphgen::{self, construct};
use vgnn_core::ingest::format::{meta_path, parse_bounds, parse_grid_dims, read_demand, read_od, write_demand, write_od};
use vgnn_core::ingest::{bin_demand, build_od, parse_shards, DemandTensor, GridSpec, TripSchema};
use vgnn_core::model::Model;
use vgnn_core::selfcheck;
use vgnn_core::trainer::{split, synth_generate, write_history};

use crate::config::PipelineConfig;
use crate::manifest::Manifest;
use crate::{
    AblateArgs, CheckArgs, Cli, Command, EvalArgs, GraphArgs, IngestArgs, SynthArgs, TrainArgs, TrainOverrides,
};

const VARIANT_FILE: &str = "variant.json";

pub fn run(cli: &Cli, argv: &[String]) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let (name, outputs) = match &cli.command {
        Command::Ingest(a) => ("ingest", ingest(&mut cfg, a, &mut inputs)?),
        Command::Graph(a) => ("graph", graph(&mut cfg, a, &mut inputs)?),
        Command::Train(a) => ("train", train(&mut cfg, a, &mut inputs)?),
        Command::Eval(a) => ("eval", eval(&mut cfg, a, &mut inputs)?),
        Command::Ablate(a) => ("ablate", ablate(&mut cfg, a, &mut inputs)?),
        Command::Synth(a) => ("synth", synth(&mut cfg, a)?),
        Command::Check(a) => return check(a),
    };
    cfg.validate()?;
    let seed = match &cli.command {
        Command::Synth(_) => cfg.synth.seed,
        _ => cfg.train.seed,
    };
    let path = Manifest::new(name, argv, &cfg, seed).write(&inputs, &outputs)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn with_meta(path: &Path) -> [PathBuf; 2] {
    [path.to_path_buf(), meta_path(path)]
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| configured.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// Unix seconds, `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS`, all UTC.
pub fn parse_instant(s: &str) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(t.and_utc().timestamp());
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").with_context(|| format!("{s:?} is not a time"))?;
    Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

fn ingest(cfg: &mut PipelineConfig, a: &IngestArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    if let Some(p) = &a.input {
        cfg.paths.input = Some(p.clone());
    }
    if let Some(s) = &a.schema {
        cfg.paths.schema = Some(s.clone());
    }
    let pattern = cfg.paths.input.clone().context("--input is required")?;
    let mut files: Vec<PathBuf> = glob::glob(&pattern)?.collect::<Result<_, _>>()?;
    files.sort();
    if files.is_empty() {
        bail!("no files match {pattern:?}");
    }
    let schema = match &cfg.paths.schema {
        Some(p) => {
            inputs.push(p.clone());
            TripSchema::from_toml(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
        }
        None => TripSchema::uber_2014(),
    };
    let (mut rows, mut cols) = (cfg.grid.rows, cfg.grid.cols);
    if let Some(g) = &a.grid {
        (rows, cols) = parse_grid_dims(g)?;
    }
    let [mut lat0, mut lat1, mut lon0, mut lon1] = [cfg.grid.lat_min, cfg.grid.lat_max, cfg.grid.lon_min, cfg.grid.lon_max];
    if let Some(b) = &a.bounds {
        [lat0, lat1, lon0, lon1] = parse_bounds(b)?;
    }
    cfg.grid = GridSpec::new(lat0, lat1, lon0, lon1, rows, cols)?;
    if let Some(b) = a.bin {
        cfg.bin_width = b;
    }
    let bin = cfg.bin_width;

    let parsed = parse_shards(&files, &schema)?;
    let first = parsed.records.iter().map(|r| r.pickup_time).min().context("no valid trip records")?;
    let last = parsed.records.iter().map(|r| r.pickup_time).max().unwrap_or(first);
    let t0 = a.start.as_deref().map(parse_instant).transpose()?.unwrap_or(first.div_euclid(bin) * bin);
    let t1 = a.end.as_deref().map(parse_instant).transpose()?.unwrap_or((last.div_euclid(bin) + 1) * bin);
    let binned = bin_demand(&parsed.records, &cfg.grid, bin, t0, t1)?;
    let demand = &binned.demand;
    write_demand(&a.out, demand)?;
    let mut outputs = with_meta(&a.out).to_vec();
    println!(
        "{} trips from {} files ({} malformed rows); {} slots x {} cells; dropped {} out of bounds, {} outside window",
        parsed.records.len(),
        files.len(),
        parsed.malformed,
        demand.slots(),
        demand.units(),
        binned.out_of_bounds,
        binned.out_of_window
    );
    if schema.has_dropoff() {
        let od = build_od(&parsed.records, &cfg.grid, t0, t0 + demand.slots() as i64 * bin)?;
        let path = a.od_out.clone().unwrap_or_else(|| a.out.with_file_name("od.bin"));
        write_od(&path, &od)?;
        println!("{} OD trips between {} cells", od.total(), od.units());
        outputs.extend(with_meta(&path));
        cfg.paths.od = Some(path);
    } else {
        println!("schema has no dropoff columns; no OD tensor written");
    }
    inputs.extend(files);
    cfg.paths.demand = Some(a.out.clone());
    Ok(outputs)
}

fn load_demand(path: &Path, inputs: &mut Vec<PathBuf>) -> Result<DemandTensor> {
    let d = read_demand(path).with_context(|| format!("loading demand {}", path.display()))?;
    inputs.extend(with_meta(path));
    Ok(d)
}

fn graph(cfg: &mut PipelineConfig, a: &GraphArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let demand_path = pick(&a.demand, &cfg.paths.demand, "demand.bin");
    let demand = load_demand(&demand_path, inputs)?;
    cfg.paths.demand = Some(demand_path);
    let od = match a.od.clone().or_else(|| cfg.paths.od.clone()) {
        Some(p) => {
            let od = read_od(&p).with_context(|| format!("loading OD {}", p.display()))?;
            inputs.extend(with_meta(&p));
            cfg.paths.od = Some(p);
            Some(od)
        }
        None => None,
    };
    cfg.delta = a.delta.unwrap_or(cfg.delta);
    cfg.epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    cfg.top_frac = a.top_frac.unwrap_or(cfg.top_frac);
    let splits = split(demand.slots(), cfg.fractions)?;
    let set = construct(&demand, od.as_ref(), splits.train.clone(), cfg.graph_params())?;
    graphgen::io::save(&a.out, &set, Some(cfg.graph_params()))?;
    let significant: usize = set.nodes.iter().map(|n| n.members.len()).sum();
    let kinds: Vec<&str> = set.graphs().iter().map(|(k, _)| k.name()).collect();
    println!("significant regions: {significant}");
    println!("virtual nodes: {}", set.len());
    println!("graphs: {}", kinds.join(", "));
    cfg.paths.graphs = Some(a.out.clone());
    Ok(vec![a.out.clone()])
}

fn apply_overrides(cfg: &mut PipelineConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    t.max_epochs = o.epochs.unwrap_or(t.max_epochs);
    t.patience = o.patience.unwrap_or(t.patience);
    t.lr = o.lr.unwrap_or(t.lr);
    t.batch = o.batch.unwrap_or(t.batch);
    t.window = o.window.unwrap_or(t.window);
    cfg.model.c1 = o.c1.or(cfg.model.c1);
    cfg.model.heads = o.heads.or(cfg.model.heads);
}

fn load_experiment(
    cfg: &mut PipelineConfig,
    demand: &Option<PathBuf>,
    graphs: &Option<PathBuf>,
    window: usize,
    inputs: &mut Vec<PathBuf>,
) -> Result<Experiment> {
    let demand_path = pick(demand, &cfg.paths.demand, "demand.bin");
    let graphs_path = pick(graphs, &cfg.paths.graphs, "graphs.json");
    let demand = load_demand(&demand_path, inputs)?;
    let set = graphgen::io::load(&graphs_path).with_context(|| format!("loading graphs {}", graphs_path.display()))?;
    inputs.push(graphs_path.clone());
    cfg.paths.demand = Some(demand_path);
    cfg.paths.graphs = Some(graphs_path);
    Ok(Experiment::from_graphs(&demand, set, cfg.fractions, window)?)
}

fn print_metrics(name: &str, m: &Metrics) {
    println!("{name}: rmse {:.4}, mae {:.4}, mape_top10 {:.4}", m.rmse, m.mae, m.mape_topk);
}

fn train(cfg: &mut PipelineConfig, a: &TrainArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    apply_overrides(cfg, &a.overrides);
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    cfg.validate()?;
    let exp = load_experiment(cfg, &a.demand, &a.graphs, cfg.train.window, inputs)?;
    let variant = VariantSpec::named(&a.variant, exp.graphs.mobility.is_some())?;
    let run = run_variant(&exp, &variant, &cfg.model, &cfg.train)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    run.model.save(&a.out)?;
    std::fs::write(a.out.join(VARIANT_FILE), serde_json::to_string_pretty(&variant)? + "\n")?;
    write_history(&a.out.join("history.csv"), &run.train.history)?;
    println!(
        "{}: {} epochs, best epoch {} with val loss {:.6}",
        variant.name,
        run.train.history.len(),
        run.train.best_epoch,
        run.train.best_val_loss
    );
    print_metrics("test", &run.report.metrics);
    cfg.paths.checkpoint = Some(a.out.clone());
    Ok(vec![a.out.clone()])
}

fn eval(cfg: &mut PipelineConfig, a: &EvalArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let ckpt = pick(&a.checkpoint, &cfg.paths.checkpoint, "ckpt");
    let model = Model::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let variant: VariantSpec = serde_json::from_str(
        &std::fs::read_to_string(ckpt.join(VARIANT_FILE)).with_context(|| format!("reading {VARIANT_FILE}"))?,
    )?;
    inputs.push(ckpt.clone());
    cfg.paths.checkpoint = Some(ckpt);
    let exp = load_experiment(cfg, &a.demand, &a.graphs, model.config.window, inputs)?;
    let report = forecast(&exp, &model, &variant, cfg.train.batch)?;
    let hm = baseline_historic_mean(&exp.data)?;
    let lv = baseline_last_value(&exp.data)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let table = metrics_table(&[
        (hm.variant.as_str(), Some(&hm.metrics)),
        (lv.variant.as_str(), Some(&lv.metrics)),
        (report.variant.as_str(), Some(&report.metrics)),
    ]);
    std::fs::write(a.out.join("metrics.csv"), &table)?;
    report.write_predictions(&a.out.join("predictions.csv"))?;
    print!("{table}");
    Ok(vec![a.out.clone()])
}

/// Mean metrics per variant over seeds, in first-seen order.
pub fn summarize(rows: &[AblationRow]) -> Vec<(String, Option<Metrics>)> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let ms: Vec<Metrics> = rows.iter().filter(|r| r.variant == name).filter_map(|r| r.metrics).collect();
            let mean = (!ms.is_empty()).then(|| {
                let n = ms.len() as f64;
                Metrics {
                    rmse: ms.iter().map(|m| m.rmse).sum::<f64>() / n,
                    mae: ms.iter().map(|m| m.mae).sum::<f64>() / n,
                    mape_topk: ms.iter().map(|m| m.mape_topk).sum::<f64>() / n,
                }
            });
            (name.to_string(), mean)
        })
        .collect()
}

fn ablate(cfg: &mut PipelineConfig, a: &AblateArgs, inputs: &mut Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    apply_overrides(cfg, &a.overrides);
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(v) = &a.variants {
        cfg.variants = v.clone();
    }
    if cfg.seeds.is_empty() {
        bail!("at least one seed is required");
    }
    cfg.validate()?;
    let exp = load_experiment(cfg, &a.demand, &a.graphs, cfg.train.window, inputs)?;
    let has_mobility = exp.graphs.mobility.is_some();
    let strict = !cfg.variants.is_empty();
    let variants: Vec<VariantSpec> = if strict {
        cfg.variants
            .iter()
            .map(|n| VariantSpec::named(n, has_mobility))
            .collect::<Result<_, _>>()?
    } else {
        VariantSpec::standard(has_mobility)
    };
    let rows = run_ablation(&exp, &variants, &cfg.model, &cfg.train, &cfg.seeds, strict)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut runs = String::from("variant,seed,rmse,mae,mape_top10,epochs\n");
    for r in &rows {
        match r.metrics {
            Some(m) => runs.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{}\n",
                r.variant, r.seed, m.rmse, m.mae, m.mape_topk, r.epochs
            )),
            None => runs.push_str(&format!("{},{},unavailable,unavailable,unavailable,0\n", r.variant, r.seed)),
        }
    }
    std::fs::write(a.out.join("runs.csv"), runs)?;
    let summary = summarize(&rows);
    let table_rows: Vec<(&str, Option<&Metrics>)> = summary.iter().map(|(n, m)| (n.as_str(), m.as_ref())).collect();
    let table = metrics_table(&table_rows);
    std::fs::write(a.out.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(vec![a.out.clone()])
}

fn synth(cfg: &mut PipelineConfig, a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let s = &mut cfg.synth;
    s.seed = a.seed.unwrap_or(s.seed);
    s.cells = a.cells.unwrap_or(s.cells);
    s.clusters = a.clusters.unwrap_or(s.clusters);
    s.days = a.days.unwrap_or(s.days);
    let data = synth_generate(s)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let demand_path = a.out.join("demand.bin");
    let od_path = a.out.join("od.bin");
    write_demand(&demand_path, &data.demand)?;
    write_od(&od_path, &data.od)?;
    std::fs::write(a.out.join("labels.json"), serde_json::to_string(&data.labels)? + "\n")?;
    println!(
        "{} slots x {} cells, {} pickups, {} OD trips",
        data.demand.slots(),
        data.demand.units(),
        data.demand.total(),
        data.od.total()
    );
    if let Some(g) = data.demand.grid {
        cfg.grid = g;
    }
    cfg.bin_width = data.demand.bin_width;
    cfg.paths.demand = Some(demand_path);
    cfg.paths.od = Some(od_path);
    Ok(vec![a.out.clone()])
}

fn check(a: &CheckArgs) -> Result<()> {
    let outcomes = selfcheck::run_all(a.seed);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!("{failed} of {} suites failed", outcomes.len());
    }
    println!("all {} suites passed", outcomes.len());
    Ok(())
}
