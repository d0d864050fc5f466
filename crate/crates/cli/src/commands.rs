use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::Parser;
use mdrr::adjustment::Convergence;
use mdrr::clustering::{cluster_attributes, ClusterPartition};
use mdrr::dataset::{load_csv, Dataset, IngestReport, SchemaSpec};
use mdrr::error_model::{absolute_error_bound, curve_to_tsv, log_spaced, relative_error_bound, sqrtb_curve, ErrorBound};
use mdrr::pipeline::{self, Block, DependenceSource, JointModel, Method, PipelineConfig, Strength};

use crate::manifest::{file_sha256, replayable_args, ArtifactWriter, Manifest};
use crate::{Cli, Command, DataArgs, ExperimentArgs, MechanismArgs};

/// Bookkeeping shared by every artifact-producing command.
struct Run {
    command: &'static str,
    args: Vec<String>,
    seed: u64,
    inputs: Vec<(String, String)>,
    n: Option<usize>,
    m: Option<usize>,
    config: Vec<(String, String)>,
    started: Instant,
    writer: ArtifactWriter,
}

impl Run {
    fn new(command: &'static str, cli: &Cli, argv: &[String], input_paths: &[&Path]) -> Result<Self> {
        let args = replayable_args(argv);
        for a in &args {
            ensure!(!a.contains(['\t', '\n']), "arguments may not contain tabs or newlines: {a:?}");
        }
        let inputs = input_paths
            .iter()
            .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
            .collect::<Result<Vec<_>>>()?;
        let run_id = Manifest::run_id(&args, &inputs);
        Ok(Self {
            command,
            args,
            seed: cli.seed,
            inputs,
            n: None,
            m: None,
            config: Vec::new(),
            started: Instant::now(),
            writer: ArtifactWriter::new(cli.out.clone(), run_id),
        })
    }

    fn data(&mut self, data: &Dataset) {
        self.n = Some(data.n());
        self.m = Some(data.m());
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string().replace(['\t', '\n'], " ")));
    }

    fn finish(self) -> Result<()> {
        let manifest = Manifest {
            run_id: self.writer.run_id().to_string(),
            command: self.command.to_string(),
            args: self.args,
            seed: self.seed,
            inputs: self.inputs,
            n: self.n,
            m: self.m,
            config: self.config,
            elapsed_ms: self.started.elapsed().as_millis(),
            artifacts: Vec::new(),
        };
        let path = self.writer.finish(manifest)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

pub fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::Ingest(data) => ingest(&cli, argv, data),
        Command::Randomize { data, mech } => randomize(&cli, argv, data, mech),
        Command::Estimate { data, mech, randomized, partition, alpha } => {
            estimate(&cli, argv, data, mech, *randomized, partition.as_deref(), *alpha)
        }
        Command::Cluster { data, mech } => cluster(&cli, argv, data, mech),
        Command::Adjust { data, mech, delta, max_iters } => adjust(&cli, argv, data, mech, *delta, *max_iters),
        Command::Experiment(args) => experiment(&cli, argv, args),
        Command::CurveSqrtb { alpha, r_min, r_max, per_decade } => curve(&cli, argv, *alpha, *r_min, *r_max, *per_decade),
        Command::Replay { manifest } => replay(manifest, &cli.out),
    }
}

fn data_paths(data: &DataArgs) -> Vec<&Path> {
    std::iter::once(data.input.as_path()).chain(data.schema.as_deref()).collect()
}

fn load(data: &DataArgs) -> Result<(Dataset, IngestReport)> {
    let spec = match &data.schema {
        Some(p) => SchemaSpec::from_file(p)?,
        None => SchemaSpec::default(),
    };
    let ingested = load_csv(&data.input, &spec)?;
    ensure!(data.repeat >= 1, "--repeat must be at least 1");
    let dataset = if data.repeat > 1 { ingested.dataset.repeat(data.repeat)? } else { ingested.dataset };
    Ok((dataset, ingested.report))
}

fn names(data: &Dataset) -> Vec<String> {
    data.schema().iter().map(|a| a.name().to_string()).collect()
}

fn strength(p: Option<f64>, epsilon: Option<f64>) -> Strength {
    match (p, epsilon) {
        (_, Some(e)) => Strength::Epsilon(e),
        (Some(p), None) => Strength::KeepProbability(p),
        (None, None) => PipelineConfig::default().strength,
    }
}

fn pipeline_config(mech: &MechanismArgs, seed: u64) -> Result<PipelineConfig> {
    let config = PipelineConfig {
        method: mech.method.parse()?,
        adjust: false,
        strength: strength(mech.p, mech.epsilon),
        tv: mech.tv,
        td: mech.td,
        dependence: mech.dependence.parse()?,
        seed,
        convergence: Convergence::default(),
        joint_cap: mech.joint_cap,
    };
    config.validate()?;
    Ok(config)
}

fn record_config(run: &mut Run, c: &PipelineConfig) {
    run.set("method", c.label());
    run.set("strength", c.strength);
    if c.method == Method::Clusters {
        run.set("tv", c.tv);
        run.set("td", c.td);
        run.set("dependence", c.dependence.as_str());
    }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn ingest(cli: &Cli, argv: &[String], data: &DataArgs) -> Result<()> {
    let mut run = Run::new("ingest", cli, argv, &data_paths(data))?;
    let (dataset, report) = load(data)?;
    run.data(&dataset);
    run.set("repeat", data.repeat);
    run.set("rows_dropped_missing", report.rows_dropped);

    let mut csv = Vec::new();
    dataset.write_csv(&mut csv, None, Some(&run.writer.stamp()))?;
    run.writer.raw("dataset.csv", csv);
    let names = names(&dataset);
    let order: Vec<&str> = names.iter().map(String::as_str).collect();
    run.writer.text("schema.txt", &SchemaSpec::pinned(&dataset).to_text(&order));

    let mut text = format!("{report}\nrepeat = {}\neffective_n = {}\n", data.repeat, dataset.n());
    for a in dataset.schema() {
        let _ = writeln!(text, "attribute {} ({}) = {} categories", a.name(), a.kind().as_str(), a.size());
    }
    run.writer.text("ingest-report.txt", &text);
    print!("{text}");
    run.finish()
}

fn randomize(cli: &Cli, argv: &[String], data: &DataArgs, mech: &MechanismArgs) -> Result<()> {
    let mut run = Run::new("randomize", cli, argv, &data_paths(data))?;
    let (dataset, _) = load(data)?;
    run.data(&dataset);
    let config = pipeline_config(mech, cli.seed)?;
    record_config(&mut run, &config);
    let release = pipeline::release(&dataset, &config)?;
    warn(&release.warnings);
    run.set("epsilon_total", release.epsilon_total());

    let mut csv = Vec::new();
    release.randomized.write_csv(&mut csv, None, Some(&run.writer.stamp()))?;
    run.writer.raw("randomized.csv", csv);
    let names = names(&release.randomized);
    run.writer.text("partition.txt", &release.partition.to_config(&names));
    let order: Vec<&str> = names.iter().map(String::as_str).collect();
    run.writer.text("schema.txt", &SchemaSpec::pinned(&release.randomized).to_text(&order));
    run.finish()
}

fn fmt_bound(b: &ErrorBound<f64>) -> String {
    b.value.finite().map_or_else(|| "inf".to_string(), |v| v.to_string())
}

fn write_blocks(run: &mut Run, data: &Dataset, blocks: &[Block], alpha: f64) -> Result<()> {
    let n = data.n();
    let mut index = String::from("block\tattributes\tsize\tepsilon\tabs_bound\trel_bound\n");
    for (k, b) in blocks.iter().enumerate() {
        let k = k + 1;
        let attrs: Vec<&str> = b.domain.attributes().iter().map(|&a| data.attribute(a).name()).collect();
        let abs = absolute_error_bound(&b.lambda, n, alpha)?;
        let rel = relative_error_bound(&b.lambda, n, alpha)?;
        let _ = writeln!(
            index,
            "{k}\t{}\t{}\t{}\t{}\t{}",
            attrs.join(","),
            b.domain.size(),
            b.epsilon,
            fmt_bound(&abs),
            fmt_bound(&rel)
        );
        run.writer.text(&format!("lambda-{k}.tsv"), &b.lambda.to_text());
        run.writer.text(&format!("pi-{k}.tsv"), &b.estimate.to_text());
        run.writer.text(&format!("projected-{k}.tsv"), &b.projected.to_text());
    }
    run.writer.text("blocks.tsv", &index);
    Ok(())
}

fn estimate(
    cli: &Cli,
    argv: &[String],
    data: &DataArgs,
    mech: &MechanismArgs,
    randomized: bool,
    partition: Option<&Path>,
    alpha: f64,
) -> Result<()> {
    let mut paths = data_paths(data);
    paths.extend(partition);
    let mut run = Run::new("estimate", cli, argv, &paths)?;
    let (dataset, _) = load(data)?;
    run.data(&dataset);
    let config = pipeline_config(mech, cli.seed)?;
    record_config(&mut run, &config);
    run.set("alpha", alpha);
    run.set("input_is_randomized", randomized);

    if randomized {
        let sizes = dataset.sizes();
        let partition = match partition {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ClusterPartition::parse_config(&text, &names(&dataset), &sizes)?
            }
            None if config.method == Method::Joint => ClusterPartition::whole(&sizes),
            None if config.method == Method::Clusters => bail!("clustered responses need --partition"),
            None => ClusterPartition::singletons(&sizes),
        };
        let blocks = pipeline::estimate_blocks(&dataset, &partition, config.strength)?;
        write_blocks(&mut run, &dataset, &blocks, alpha)?;
    } else {
        let release = pipeline::release(&dataset, &config)?;
        warn(&release.warnings);
        write_blocks(&mut run, &release.randomized, &release.blocks, alpha)?;
    }
    run.finish()
}

fn cluster(cli: &Cli, argv: &[String], data: &DataArgs, mech: &MechanismArgs) -> Result<()> {
    let mut run = Run::new("cluster", cli, argv, &data_paths(data))?;
    let (dataset, _) = load(data)?;
    run.data(&dataset);
    let config = PipelineConfig { method: Method::Clusters, ..pipeline_config(mech, cli.seed)? };
    record_config(&mut run, &config);
    let (matrix, privacy) = pipeline::dependences(&dataset, &config)?;
    if let Some(p) = &privacy {
        if let Some(seq) = p.sequential {
            run.set("dependence_epsilon_sequential", seq);
        }
        if let Some(par) = p.parallel {
            run.set("dependence_epsilon_parallel", par);
        }
        run.set("dependence_privacy_note", &p.note);
    }
    let partition = cluster_attributes(&matrix, &dataset.sizes(), config.tv, config.td)?;
    run.writer.text("dependences.tsv", &matrix.to_tsv());
    run.writer.text("partition.txt", &partition.to_config(&names(&dataset)));
    print!("{}", partition.to_config(&names(&dataset)));
    run.finish()
}

fn adjust(cli: &Cli, argv: &[String], data: &DataArgs, mech: &MechanismArgs, delta: f64, max_iters: usize) -> Result<()> {
    let mut run = Run::new("adjust", cli, argv, &data_paths(data))?;
    let (dataset, _) = load(data)?;
    run.data(&dataset);
    let config = PipelineConfig {
        adjust: true,
        convergence: Convergence { max_weight_delta: delta, max_iters },
        ..pipeline_config(mech, cli.seed)?
    };
    config.validate()?;
    record_config(&mut run, &config);
    let (release, model, summary) = pipeline::run(&dataset, &config)?;
    warn(&release.warnings);
    let JointModel::Weighted { records, weights } = model else {
        bail!("pipeline: adjustment did not produce weights");
    };
    let summary = summary.context("pipeline: adjustment summary missing")?;
    run.set("iterations", summary.iterations);
    run.set("converged", summary.converged);
    run.set("residual", summary.residual);
    if !summary.converged {
        eprintln!("warning: adjustment stopped after {} iterations without converging", summary.iterations);
    }

    let mut csv = Vec::new();
    records.write_csv(&mut csv, Some(&weights), Some(&run.writer.stamp()))?;
    run.writer.raw("weighted.csv", csv);
    run.writer.text("partition.txt", &release.partition.to_config(&names(&records)));
    let mut text = format!(
        "iterations = {}\nconverged = {}\nresidual = {}\n",
        summary.iterations, summary.converged, summary.residual
    );
    for (k, d) in summary.diverted.iter().enumerate() {
        let _ = writeln!(text, "diverted_mass.block{} = {d}", k + 1);
    }
    run.writer.text("adjustment.txt", &text);
    run.finish()
}

fn experiment_configs(args: &ExperimentArgs, seed: u64) -> Result<Vec<PipelineConfig>> {
    let dependence: DependenceSource = args.dependence.parse()?;
    let strengths: Vec<Strength> = if !args.epsilon.is_empty() {
        args.epsilon.iter().map(|&e| Strength::Epsilon(e)).collect()
    } else if !args.p.is_empty() {
        args.p.iter().map(|&p| Strength::KeepProbability(p)).collect()
    } else {
        vec![PipelineConfig::default().strength]
    };
    ensure!(!args.tv.is_empty() && !args.td.is_empty(), "need at least one T_v and one T_d");
    let mut configs = Vec::new();
    for &strength in &strengths {
        for name in &args.method {
            let (base, explicit) = match name.strip_suffix("+adjustment") {
                Some(b) => (b, true),
                None => (name.as_str(), false),
            };
            let method: Method = base.parse()?;
            let adjust = explicit || (args.adjust && method != Method::Randomized);
            let thresholds: Vec<(u128, f64)> = if method == Method::Clusters {
                args.tv.iter().flat_map(|&tv| args.td.iter().map(move |&td| (tv, td))).collect()
            } else {
                vec![(args.tv[0], args.td[0])]
            };
            for (tv, td) in thresholds {
                let c = PipelineConfig {
                    method,
                    adjust,
                    strength,
                    tv,
                    td,
                    dependence,
                    seed,
                    ..PipelineConfig::default()
                };
                c.validate()?;
                configs.push(c);
            }
        }
    }
    Ok(configs)
}

fn experiment(cli: &Cli, argv: &[String], args: &ExperimentArgs) -> Result<()> {
    let mut run = Run::new("experiment", cli, argv, &data_paths(&args.data))?;
    let (dataset, _) = load(&args.data)?;
    run.data(&dataset);
    let configs = experiment_configs(args, cli.seed)?;
    run.set("configurations", configs.len());
    run.set("runs", args.runs);
    run.set("repeat", args.data.repeat);
    run.set("query_attributes", args.query_attributes);
    let sigmas: Vec<String> = args.sigma.iter().map(f64::to_string).collect();
    run.set("sigma", sigmas.join(","));
    let rows = pipeline::run_comparison(&dataset, &configs, &args.sigma, args.runs, args.query_attributes, cli.seed)?;
    let table = pipeline::rows_to_tsv(&rows);
    print!("{table}");
    run.writer.text("experiment.tsv", &table);
    run.finish()
}

fn curve(cli: &Cli, argv: &[String], alpha: f64, r_min: usize, r_max: usize, per_decade: usize) -> Result<()> {
    let mut run = Run::new("curve-sqrtb", cli, argv, &[])?;
    ensure!(r_min >= 1 && r_min <= r_max, "need 1 <= r_min <= r_max");
    run.set("alpha", alpha);
    let curve = sqrtb_curve(log_spaced(r_min, r_max, per_decade), alpha)?;
    run.writer.text("curve-sqrtb.tsv", &curve_to_tsv(&curve));
    run.finish()
}

fn replay(path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let recorded = Manifest::parse(&text)?;
    ensure!(recorded.command != "replay", "cannot replay a replay");
    for (input, digest) in &recorded.inputs {
        let now = file_sha256(Path::new(input))?;
        ensure!(&now == digest, "input {input} changed since the recorded run (sha256 {now}, recorded {digest})");
    }
    let mut argv = recorded.args.clone();
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let cli = Cli::try_parse_from(std::iter::once("mdrr".to_string()).chain(argv.iter().cloned()))
        .context("manifest arguments no longer parse")?;
    dispatch(cli, &argv)?;

    let fresh = Manifest::parse(&std::fs::read_to_string(PathBuf::from(out).join(Manifest::file_name(&recorded.command)))?)?;
    ensure!(fresh.run_id == recorded.run_id, "run id differs: {} vs {}", fresh.run_id, recorded.run_id);
    for a in &recorded.artifacts {
        let now = file_sha256(&out.join(&a.name))?;
        ensure!(now == a.sha256, "artifact {} differs on replay", a.name);
    }
    println!("replay {}: {} artifacts identical", recorded.run_id, recorded.artifacts.len());
    Ok(())
}
