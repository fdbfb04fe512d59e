use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use attribens::codebook::{binomial, min_code_params, Codebook, WeightVector};
use attribens::diffusion::{NoiseRecord, TrainingConfig};
use attribens::ensemble::{EnsembleDenoiser, SampleRecord};
use attribens::experiments::{self, purpose, NearestCentroid};
use attribens::influence::{approx_counterfactual, compute_jacobian, dedup_top_lists, rank_all, InfluenceReport};
use attribens::manifest::{
    atomic_write, read_json, sha256_hex, store_members, write_json, DatasetSpec, FileRef, LoadedManifest,
    RunManifest, ScheduleSpec, SeedBlock, RUN_MANIFEST_VERSION,
};
use attribens::numerics::derive_seed;
use attribens::study;
use attribens::theory_oracle as oracle;
use attribens::{Error, Result};

#[derive(Parser)]
#[command(name = "attribens", version, about = "Encoded diffusion ensembles for training-data attribution")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ATTRIBENS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign codes and write a codebook plus a run manifest.
    MakeCodes(MakeCodes),
    /// Train every ensemble member named by a manifest.
    Train(ManifestArg),
    /// Generate samples with the uniform ensemble.
    Sample(SampleCmd),
    /// Regenerate a sample with an item or group ablated.
    Counterfactual(CounterfactualCmd),
    /// Sensitivity of a sample to the ensemble weights.
    Jacobian(JacobianCmd),
    /// Rank groups by approximate influence on samples.
    Rank(RankCmd),
    /// Run one of the study harnesses.
    Experiment(ExperimentCmd),
    /// Exact-enumeration checks of the coding guarantees.
    Oracle(OracleCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFamily {
    Glyphs,
    Mixture,
}

#[derive(Args)]
#[command(group(ArgGroup::new("what").required(true).args(["items", "classes"])))]
struct MakeCodes {
    /// One code per item.
    #[arg(long)]
    items: Option<usize>,
    /// One code per class; 7 classes use the Walsh codes.
    #[arg(long)]
    classes: Option<usize>,
    /// Items per class when coding classes.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Require C(n,h) >= 2 * groups.
    #[arg(long)]
    doubled: bool,
    /// Explicit code length (otherwise the smallest even n with n = 2h).
    #[arg(long, requires = "h")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    h: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "glyphs")]
    dataset: DatasetFamily,
    /// Glyph noise level, or mixture separation.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, default_value_t = study::STEPS)]
    steps: usize,
    #[arg(long, default_value_t = study::BETA_START)]
    beta_start: f64,
    #[arg(long, default_value_t = study::BETA_END)]
    beta_end: f64,
    #[arg(long, default_value_t = study::EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = study::BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = study::LEARNING_RATE)]
    learning_rate: f64,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_values_t = study::HIDDEN.to_vec())]
    hidden: Vec<usize>,
}

#[derive(Args)]
struct ManifestArg {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Sampling seed (defaults to the manifest's sampling seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("target").required(true).args(["item", "group"])))]
struct CounterfactualCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    item: Option<usize>,
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JacobianCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "sample", required = true)]
    samples: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Remove groups shared between the top lists.
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    ClassAblation,
    Convergence,
    Fidelity,
    Coherence,
}

#[derive(Args)]
struct ExperimentCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    name: ExperimentName,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 8)]
    ablations: usize,
    /// Experiment seed (defaults to the manifest's experiment seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleCmd {
    /// 1: coverage, bias and collision checks; 2: balanced set systems.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    theorem: u8,
    /// Ground set size for the balanced-system enumeration.
    #[arg(long, default_value_t = 4)]
    ground: usize,
    #[arg(long, default_value_t = 4)]
    items: usize,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    h: usize,
    /// Random codebooks for the coverage check.
    #[arg(long, default_value_t = 100)]
    codebooks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Digests of the inputs and the seed used by one command.
#[derive(Serialize)]
struct Provenance {
    command: String,
    manifest_sha256: String,
    codebook_sha256: String,
    member_sha256: Vec<String>,
    seeds: SeedBlock,
    seed: u64,
}

fn provenance(loaded: &LoadedManifest, command: &str, seed: u64) -> Result<Provenance> {
    let m = &loaded.manifest;
    Ok(Provenance {
        command: command.into(),
        manifest_sha256: loaded.digest()?,
        codebook_sha256: m.codebook.sha256.clone(),
        member_sha256: m.members.iter().map(|f| f.sha256.clone()).collect(),
        seeds: m.seeds,
        seed,
    })
}

fn make_codes(args: &MakeCodes) -> Result<()> {
    let seeds = SeedBlock::from_master(args.seed);
    let (classes, total, grouped) = match (args.items, args.classes) {
        (Some(n), _) => (7.min(n.max(1)), n, false),
        (None, Some(k)) => (k, k * args.per_class, true),
        (None, None) => unreachable!("clap requires one of --items/--classes"),
    };
    if total == 0 {
        return Err(Error::InvalidArgument("no items to code".into()));
    }
    let groups = if grouped { classes } else { total };
    let (family, class_count, jitter) = match args.dataset {
        DatasetFamily::Glyphs => ("glyphs".to_string(), classes, args.jitter.unwrap_or(experiments::DEFAULT_GLYPH_JITTER)),
        DatasetFamily::Mixture => ("gaussian-mixture-2".to_string(), classes, args.jitter.unwrap_or(4.0)),
    };
    let generator = experiments::GeneratorDescriptor {
        family,
        class_count,
        per_class: total.div_ceil(class_count),
        jitter,
        seed: seeds.data,
    };
    let dataset = DatasetSpec { generator, items: total };
    let labels = dataset.build()?.labels;

    let codebook = match (args.n, args.h) {
        (Some(n), Some(h)) if grouped => Codebook::assign_grouped(groups, n, h, seeds.codes, labels)?,
        (Some(n), Some(h)) => Codebook::assign(groups, n, h, seeds.codes)?,
        _ if grouped && classes == 7 && !args.doubled => Codebook::walsh_classes(&labels)?,
        _ => {
            let (n, h) = min_code_params(groups, args.doubled)?;
            match grouped {
                true => Codebook::assign_grouped(groups, n, h, seeds.codes, labels)?,
                false => Codebook::assign(groups, n, h, seeds.codes)?,
            }
        }
    };
    let text = codebook.to_json();
    let codebook_path = args.out.join("codebook.json");
    atomic_write(&codebook_path, text.as_bytes())?;

    let schedule = ScheduleSpec {
        steps: args.steps,
        beta_start: args.beta_start,
        beta_end: args.beta_end,
    };
    schedule.build()?;
    let training = TrainingConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        hidden: args.hidden.clone(),
        seed: seeds.training,
        ..TrainingConfig::default()
    };
    let manifest = RunManifest {
        version: RUN_MANIFEST_VERSION,
        dataset,
        codebook: FileRef {
            path: "codebook.json".into(),
            sha256: sha256_hex(text.as_bytes()),
        },
        schedule,
        training,
        members: vec![],
        seeds,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "n={} h={} C(n,h)={} groups={} items={}",
        codebook.n(),
        codebook.h(),
        binomial(codebook.n() as u64, codebook.h() as u64),
        codebook.num_groups(),
        codebook.num_items()
    );
    Ok(())
}

fn train(args: &ManifestArg) -> Result<()> {
    let mut loaded = LoadedManifest::load(&args.manifest)?;
    let codebook = loaded.codebook()?;
    let dataset = loaded.dataset()?;
    if codebook.num_items() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "codebook covers {} items but the dataset has {}",
            codebook.num_items(),
            dataset.len()
        )));
    }
    let schedule = loaded.manifest.schedule.build()?;
    let ens = EnsembleDenoiser::train(codebook, &dataset.items, &loaded.manifest.training, schedule)?;
    store_members(&mut loaded, &ens)?;
    for (i, m) in loaded.manifest.members.iter().enumerate() {
        println!("member {i} {} {}", m.path, m.sha256);
    }
    Ok(())
}

fn sample_record(ens: &EnsembleDenoiser, seed: u64, index: usize) -> NoiseRecord {
    NoiseRecord::new(
        seed,
        derive_seed(seed, purpose::RECORD, index as u64),
        ens.schedule().steps,
        vec![ens.sample_dim()],
    )
}

fn sample(args: &SampleCmd) -> Result<()> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let ens = loaded.ensemble()?;
    let seed = args.seed.unwrap_or(loaded.manifest.seeds.sampling);
    let u0 = WeightVector::uniform(ens.len());
    for i in 0..args.samples {
        let rec = ens.generate(&u0, &sample_record(&ens, seed, i))?;
        write_json(&args.out.join(format!("sample_{i:04}.json")), &rec)?;
    }
    write_json(&args.out.join("provenance.json"), &provenance(&loaded, "sample", seed)?)?;
    println!("wrote {} samples to {}", args.samples, args.out.display());
    Ok(())
}

fn load_sample(ens: &EnsembleDenoiser, path: &Path) -> Result<SampleRecord> {
    let rec: SampleRecord = read_json(path)?;
    if rec.provenance.ensemble_id != ens.ensemble_id() {
        return Err(Error::InvalidArgument(format!(
            "{} was generated by ensemble {}, not {}",
            path.display(),
            rec.provenance.ensemble_id,
            ens.ensemble_id()
        )));
    }
    Ok(rec)
}

fn counterfactual(args: &CounterfactualCmd) -> Result<()> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let ens = loaded.ensemble()?;
    let original = load_sample(&ens, &args.sample)?;
    let cf = match (args.item, args.group) {
        (Some(item), _) => ens.counterfactual(item, &original.noise)?,
        (None, Some(group)) => ens.group_counterfactual(group, &original.noise)?,
        (None, None) => unreachable!("clap requires one of --item/--group"),
    };
    let distance = attribens::influence::euclidean(&cf.sample.to_f64(), &original.sample.to_f64())?;
    write_json(&args.out, &cf)?;
    println!("distance {distance:e}");
    Ok(())
}

fn jacobian(args: &JacobianCmd) -> Result<()> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let ens = loaded.ensemble()?;
    let original = load_sample(&ens, &args.sample)?;
    let j = compute_jacobian(&ens, &original.noise)?;
    let mut csv = String::new();
    for r in 0..j.rows {
        let row: Vec<String> = (0..j.cols).map(|c| format!("{:e}", j.get(r, c))).collect();
        let _ = writeln!(csv, "{}", row.join(","));
    }
    write_json(&args.out.join("jacobian.json"), &j)?;
    atomic_write(&args.out.join("jacobian.csv"), csv.as_bytes())?;
    write_json(&args.out.join("provenance.json"), &provenance(&loaded, "jacobian", original.noise.seed)?)?;
    let identity = approx_counterfactual(&original, &j, &WeightVector::uniform(ens.len()))?;
    debug_assert_eq!(identity, original.sample);
    println!("jacobian {}x{}", j.rows, j.cols);
    Ok(())
}

fn rank(args: &RankCmd) -> Result<()> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let ens = loaded.ensemble()?;
    let mut reports = Vec::new();
    for path in &args.samples {
        let original = load_sample(&ens, path)?;
        let id = path.file_stem().map_or_else(|| "sample".into(), |s| s.to_string_lossy().into_owned());
        let j = compute_jacobian(&ens, &original.noise)?;
        reports.push(rank_all(&j, ens.codebook(), args.top, id)?);
    }
    let csv = |rs: &[InfluenceReport]| {
        let mut out = String::from("sample_id,rank,group,score\n");
        for r in rs {
            out.push_str(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")).collect::<String>().as_str());
        }
        out
    };
    for r in &reports {
        write_json(&args.out.join(format!("report_{}.json", r.sample_id)), r)?;
    }
    atomic_write(&args.out.join("ranking.csv"), csv(&reports).as_bytes())?;
    if args.dedup {
        let outcome = dedup_top_lists(&reports, args.top)?;
        atomic_write(&args.out.join("ranking_dedup.csv"), csv(&outcome.reports).as_bytes())?;
        write_json(&args.out.join("dedup.json"), &outcome)?;
        println!("dedup removed {} groups in {} iterations", outcome.removed.len(), outcome.iterations);
    }
    write_json(&args.out.join("provenance.json"), &provenance(&loaded, "rank", 0)?)?;
    println!("ranked {} samples, top {}", reports.len(), args.top);
    Ok(())
}

#[derive(Serialize)]
struct Criterion {
    name: String,
    pass: bool,
    detail: String,
}

fn criterion(name: &str, pass: bool, detail: String) -> Criterion {
    Criterion {
        name: name.into(),
        pass,
        detail,
    }
}

fn experiment(args: &ExperimentCmd) -> Result<()> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let ens = loaded.ensemble()?;
    let seed = args.seed.unwrap_or(loaded.manifest.seeds.experiment);
    let out = &args.out;
    let criteria = match args.name {
        ExperimentName::ClassAblation => {
            let dataset = loaded.dataset()?;
            let clf = NearestCentroid::fit(&dataset)?;
            let r = experiments::class_ablation_experiment(&ens, &clf, args.samples, seed)?;
            let mut csv = String::from("ablated_class,classified_class,count\n");
            for c in 0..r.frequency.classes {
                let _ = writeln!(csv, "none,{c},{}", r.frequency.unablated[c]);
            }
            for (a, row) in r.frequency.ablated.iter().enumerate() {
                for (c, n) in row.iter().enumerate() {
                    let _ = writeln!(csv, "{a},{c},{n}");
                }
            }
            atomic_write(&out.join("class_frequency.csv"), csv.as_bytes())?;
            write_json(&out.join("class_ablation.json"), &r)?;
            let chance = 1.0 / r.frequency.classes as f64;
            vec![
                criterion(
                    "own-class suppression",
                    r.unsuppressed_classes().is_empty(),
                    format!("unsuppressed classes {:?}", r.unsuppressed_classes()),
                ),
                criterion(
                    "argmax above chance",
                    r.argmax_accuracy > chance,
                    format!("{:.4} vs {chance:.4}", r.argmax_accuracy),
                ),
                criterion(
                    "own-class distance median larger",
                    r.own_median() > r.other_median(),
                    format!("{:.4} vs {:.4}", r.own_median(), r.other_median()),
                ),
            ]
        }
        ExperimentName::Convergence => {
            let r = experiments::convergence_experiment(&ens, args.samples, seed)?;
            let mut csv = String::from("k,mean_distance_to_full,mean_increment_to_next\n");
            for k in 0..r.mean_distance.len() {
                let inc = r.mean_increment.get(k).map_or(String::new(), |v| format!("{v:e}"));
                let _ = writeln!(csv, "{},{:e},{inc}", k + 1, r.mean_distance[k]);
            }
            atomic_write(&out.join("convergence.csv"), csv.as_bytes())?;
            write_json(&out.join("convergence.json"), &r)?;
            vec![
                criterion("distance non-increasing", r.distance_non_increasing(), format!("{:?}", r.mean_distance)),
                criterion("increments decreasing", r.increments_decreasing(), format!("{:?}", r.mean_increment)),
            ]
        }
        ExperimentName::Fidelity => {
            let r = experiments::jacobian_fidelity_experiment(&ens, args.samples, args.ablations, seed)?;
            let mut csv = String::from("sample,pearson_jacobian,pearson_last_step,pearson_individual,spearman_jacobian,spearman_last_step,spearman_individual\n");
            for s in 0..r.num_samples {
                let (p, q) = (&r.pearson, &r.spearman);
                let _ = writeln!(
                    csv,
                    "{s},{},{},{},{},{},{}",
                    p.jacobian[s], p.last_step[s], p.individual[s], q.jacobian[s], q.last_step[s], q.individual[s]
                );
            }
            atomic_write(&out.join("fidelity.csv"), csv.as_bytes())?;
            write_json(&out.join("fidelity.json"), &r)?;
            let [pj, pl, pi] = r.pearson.medians();
            let [sj, _, _] = r.spearman.medians();
            vec![
                criterion("pearson beats last-step", pj > pl, format!("{pj:.4} vs {pl:.4}")),
                criterion("pearson beats individual models", pj > pi, format!("{pj:.4} vs {pi:.4}")),
                criterion("spearman positive", sj > 0.0, format!("{sj:.4}")),
            ]
        }
        ExperimentName::Coherence => {
            let dataset = loaded.dataset()?;
            let r = experiments::coherence_experiment(&ens, &dataset, args.samples, seed)?;
            let mut csv = String::from("source,frechet\n");
            let _ = writeln!(csv, "ensemble,{:e}", r.ensemble);
            for (i, v) in r.members.iter().enumerate() {
                let _ = writeln!(csv, "member_{i},{v:e}");
            }
            atomic_write(&out.join("coherence.csv"), csv.as_bytes())?;
            write_json(&out.join("coherence.json"), &r)?;
            vec![criterion(
                "ensemble within worst member",
                r.ensemble <= r.worst_member(),
                format!("{:.4} vs {:.4}", r.ensemble, r.worst_member()),
            )]
        }
    };
    for c in &criteria {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_json(&out.join("summary.json"), &criteria)?;
    write_json(&out.join("provenance.json"), &provenance(&loaded, "experiment", seed)?)?;
    Ok(())
}

fn run_oracle(args: &OracleCmd) -> Result<()> {
    let mut criteria = Vec::new();
    match args.theorem {
        2 => {
            for e in 2..=args.ground {
                let found = oracle::enumerate_balanced_systems(e)?;
                criteria.push(criterion(
                    &format!("no small balanced system, |E|={e}"),
                    true,
                    format!("{} balanced systems, none with 2 <= |M| < {e}", found.len()),
                ));
            }
        }
        _ => {
            let mut bad = 0;
            for b in 0..args.codebooks {
                let s = derive_seed(args.seed, 1, b as u64);
                let groups = 1 + (s % 500) as usize;
                let (n, h) = min_code_params(groups, false)?;
                let cb = Codebook::assign(groups, n, h, s)?;
                bad += usize::from(!cb.verify_coverage().0);
            }
            criteria.push(criterion(
                "coverage",
                bad == 0,
                format!("{} of {} random codebooks violate coverage", bad, args.codebooks),
            ));
            let data: Vec<Vec<f64>> = (0..args.items).map(|i| vec![(i as f64 * 0.7).sin()]).collect();
            let mean = oracle::SubsetMeanTrainer { clamp: 1.0, empty_value: 0.0 };
            let table = oracle::HashTableTrainer { seed: args.seed, dim: 3, clamp: 1.0, noise_levels: 2 };
            let probe = [0.25];
            for (name, report) in [
                ("bias, subset mean", oracle::exact_encoded_bias(&mean, &data, args.n, args.h, &probe)),
                ("bias, hash table", oracle::exact_encoded_bias(&table, &data, args.n, args.h, &probe)),
                ("ablated bias, subset mean", oracle::exact_ablated_bias(&mean, &data, 0, args.n, args.h, &probe)),
                ("ablated bias, hash table", oracle::exact_ablated_bias(&table, &data, 0, args.n, args.h, &probe)),
            ] {
                match report {
                    Ok(r) => criteria.push(criterion(name, true, format!("{:.6} <= {:.6}", r.bias, r.bound))),
                    Err(Error::BoundViolated(m)) => criteria.push(criterion(name, false, m)),
                    Err(e) => return Err(e),
                }
            }
            let (exact, bound) = oracle::collision_probability(args.n, args.h, args.items)?;
            criteria.push(criterion("collision probability", true, format!("{exact:.10} <= {bound:.10}")));
        }
    }
    for c in &criteria {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = &args.out {
        write_json(out, &criteria)?;
    }
    match criteria.iter().all(|c| c.pass) {
        true => Ok(()),
        false => Err(Error::BoundViolated("oracle check failed".into())),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Degenerate(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::MakeCodes(a) => make_codes(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Counterfactual(a) => counterfactual(a),
        Command::Jacobian(a) => jacobian(a),
        Command::Rank(a) => rank(a),
        Command::Experiment(a) => experiment(a),
        Command::Oracle(a) => run_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
