//! Command-line front end: argument definitions and the four commands.
//!
//! Values come from an optional `--config` file (see [`crate::config`]) and are
//! replaced by any flag given on the command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::design::{CausalDesign, DerivedTerm, DesignSpec, Encoding, Factor, NumericColumn, RawDataset};
use crate::effects::{self, extremes_from_cates, unit_cates, Treatment, SCALE_NOTE};
use crate::error::{Error, Result};
use crate::output::{write_atomic, write_csv, write_json};
use crate::simulation::{run_monte_carlo, MonteCarloConfig, ScenarioKind, SimOutcome};
use crate::svm::{FitReport, PenaltyPair, SvmSettings};
use crate::tuning::{gcv, search, SearchSettings};

#[derive(Debug, Parser)]
#[command(
    name = "hte-svm",
    version,
    about = "Sparse SVM estimates of heterogeneous treatment effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune and fit the model on a CSV data set.
    Fit(FitArgs),
    /// Effect tables from a saved fit.
    Effects(EffectsArgs),
    /// Monte Carlo studies (discovery rates and payoff).
    Simulate(SimArgs),
    /// Payoff study only (second simulation design).
    Payoff(SimArgs),
}

#[derive(Debug, Default, Args)]
pub struct RoleArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Treatment factor column; repeat for factorial designs.
    #[arg(long)]
    pub treatment: Vec<String>,
    #[arg(long)]
    pub covariates: Vec<String>,
    #[arg(long)]
    pub weights: Option<String>,
    /// Derived term, `square:<col>` or `interact:<col>:<col>`.
    #[arg(long)]
    pub derived: Vec<String>,
    /// `factorial` (default) or `interaction`.
    #[arg(long)]
    pub encoding: Option<String>,
    /// Baseline level per treatment factor.
    #[arg(long)]
    pub baseline: Vec<String>,
    /// Covariates interacted with the treatment (interaction encoding).
    #[arg(long)]
    pub heterogeneity: Vec<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub roles: RoleArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_min: Option<i32>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_max: Option<i32>,
    #[arg(long)]
    pub precision: Option<f64>,
    /// Fixed penalty on the causal columns; skips tuning together with `--lambda-v`.
    #[arg(long)]
    pub lambda_z: Option<f64>,
    #[arg(long)]
    pub lambda_v: Option<f64>,
    /// Also write the search trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Default, Args)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub roles: RoleArgs,
    /// `fit.json` written by the fit command.
    #[arg(long)]
    pub fit: PathBuf,
    /// Size of the highest and lowest CATE groups.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Also write every unit's CATE for every treatment.
    #[arg(long)]
    pub unit_cates: bool,
}

#[derive(Debug, Default, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `scenario-1`, `scenario-1-correct`, `scenario-1-misspecified` or `scenario-2`.
    #[arg(long)]
    pub scenario: Vec<String>,
    #[arg(long)]
    pub sizes: Vec<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub eval_n: Option<usize>,
    /// Maximum number of treated units in the payoff evaluation.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub calibration_draws: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_min: Option<i32>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_max: Option<i32>,
    #[arg(long)]
    pub precision: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Column roles and encoding, stored alongside a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRoles {
    pub outcome: String,
    pub treatments: Vec<String>,
    pub covariates: Vec<String>,
    pub weights: Option<String>,
    pub derived: Vec<String>,
    pub encoding: String,
    pub baseline: Vec<String>,
    pub heterogeneity: Option<Vec<String>>,
}

impl DesignRoles {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let outcome = cfg
            .get("outcome")
            .ok_or_else(|| Error::Config("no outcome column given".into()))?
            .to_string();
        let treatments = cfg.list("treatment");
        if treatments.is_empty() {
            return Err(Error::Config("no treatment column given".into()));
        }
        let encoding = cfg.get("encoding").unwrap_or("factorial").to_string();
        if encoding != "factorial" && encoding != "interaction" {
            return Err(Error::Config(format!("unknown encoding '{encoding}'")));
        }
        let mut baseline = cfg.list("baseline");
        if baseline.is_empty() {
            baseline = vec!["0".into(); treatments.len()];
        }
        let heterogeneity = cfg.list("heterogeneity");
        Ok(DesignRoles {
            outcome,
            treatments,
            covariates: cfg.list("covariates"),
            weights: cfg.get("weights").map(String::from),
            derived: cfg.list("derived"),
            encoding,
            baseline,
            heterogeneity: (!heterogeneity.is_empty()).then_some(heterogeneity),
        })
    }

    pub fn spec(&self) -> Result<DesignSpec> {
        let derived = self
            .derived
            .iter()
            .map(|d| DerivedTerm::parse(d))
            .collect::<Result<_>>()?;
        let encoding = if self.encoding == "interaction" {
            Encoding::Interaction {
                heterogeneity: self.heterogeneity.clone(),
            }
        } else {
            Encoding::Factorial {
                baseline: self.baseline.clone(),
            }
        };
        Ok(DesignSpec { encoding, derived })
    }
}

/// Reads the columns named in `roles` from a headed CSV file.
pub fn read_dataset(path: &Path, roles: &DesignRoles) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found in {}", path.display())))
    };
    let y_idx = index(&roles.outcome)?;
    let t_idx: Vec<usize> = roles.treatments.iter().map(|t| index(t)).collect::<Result<_>>()?;
    let x_idx: Vec<usize> = roles.covariates.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let w_idx = roles.weights.as_deref().map(index).transpose()?;

    let mut outcome = Vec::new();
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); t_idx.len()];
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); x_idx.len()];
    let mut weights = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let number = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("column '{}' row {}: '{s}' is not a number", header[j], row + 1)))
        };
        outcome.push(number(y_idx)?);
        for (f, &j) in t_idx.iter().enumerate() {
            levels[f].push(rec.get(j).unwrap_or("").to_string());
        }
        for (c, &j) in x_idx.iter().enumerate() {
            covs[c].push(number(j)?);
        }
        if let Some(j) = w_idx {
            weights.push(number(j)?);
        }
    }
    Ok(RawDataset {
        outcome,
        treatments: roles
            .treatments
            .iter()
            .zip(levels)
            .map(|(name, l)| Factor::new(name.clone(), l))
            .collect(),
        covariates: roles
            .covariates
            .iter()
            .zip(covs)
            .map(|(name, v)| NumericColumn::new(name.clone(), v))
            .collect(),
        weights: w_idx.map(|_| weights),
    })
}

/// Saved fit: the column roles needed to rebuild the design and the estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitDocument {
    pub tool: String,
    pub version: String,
    pub design: DesignRoles,
    pub fit: FitReport,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

fn apply_roles(cfg: &mut ConfigFile, r: &RoleArgs) {
    cfg.override_scalar("data", r.data.as_ref().map(|p| p.display().to_string()));
    cfg.override_scalar("outcome", r.outcome.clone());
    cfg.override_list("treatment", &r.treatment);
    cfg.override_list("covariates", &r.covariates);
    cfg.override_scalar("weights", r.weights.clone());
    cfg.override_list("derived", &r.derived);
    cfg.override_scalar("encoding", r.encoding.clone());
    cfg.override_list("baseline", &r.baseline);
    cfg.override_list("heterogeneity", &r.heterogeneity);
    cfg.override_scalar("output", r.output.as_ref().map(|p| p.display().to_string()));
}

fn required_path(cfg: &ConfigFile, key: &str) -> Result<PathBuf> {
    cfg.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("'{key}' is required")))
}

fn grid(cfg: &ConfigFile) -> Result<SearchSettings> {
    let lo = cfg.parsed::<i32>("grid_min")?.unwrap_or(-15);
    let hi = cfg.parsed::<i32>("grid_max")?.unwrap_or(10);
    if lo > hi {
        return Err(Error::Config(format!("grid_min {lo} exceeds grid_max {hi}")));
    }
    let mut s = SearchSettings {
        grid: (lo..=hi).map(f64::from).collect(),
        ..SearchSettings::default()
    };
    if let Some(p) = cfg.parsed::<f64>("precision")? {
        s.precision = p;
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub document: FitDocument,
    pub output: PathBuf,
}

#[derive(Serialize)]
struct CoefficientRow<'a> {
    block: &'a str,
    name: &'a str,
    kind: String,
    coefficient: f64,
    rescaled: f64,
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitSummary> {
    let mut cfg = load_config(args.roles.config.as_deref())?;
    apply_roles(&mut cfg, &args.roles);
    cfg.override_scalar("grid_min", args.grid_min.map(|v| v.to_string()));
    cfg.override_scalar("grid_max", args.grid_max.map(|v| v.to_string()));
    cfg.override_scalar("precision", args.precision.map(|v| v.to_string()));
    cfg.override_scalar("lambda_z", args.lambda_z.map(|v| v.to_string()));
    cfg.override_scalar("lambda_v", args.lambda_v.map(|v| v.to_string()));

    let roles = DesignRoles::from_config(&cfg)?;
    let data = required_path(&cfg, "data")?;
    let out = required_path(&cfg, "output")?;
    let raw = read_dataset(&data, &roles)?;
    let design = CausalDesign::build(&raw, &roles.spec()?)?;
    let settings = grid(&cfg)?;

    let fixed = (cfg.parsed::<f64>("lambda_z")?, cfg.parsed::<f64>("lambda_v")?);
    let (fitted, gcv_value, trace) = match fixed {
        (Some(lz), Some(lv)) => {
            let f = crate::svm::SvmProblem::new(&design).fit_with(
                PenaltyPair::new(lz, lv)?,
                None,
                &SvmSettings::default(),
            )?;
            let g = gcv(&f, &design);
            (f, g, None)
        }
        (None, None) => {
            let res = search(&design, &settings)?;
            let g = res.best.gcv;
            (res.best.fit.clone(), g, Some(res))
        }
        _ => return Err(Error::Config("lambda_z and lambda_v must be given together".into())),
    };

    let report = FitReport::new(&fitted, &design, Some(gcv_value));
    let document = FitDocument {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        design: roles,
        fit: report,
    };
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("fit.json"), &document)?;

    let rows: Vec<CoefficientRow> = [("Z", &document.fit.beta), ("V", &document.fit.gamma)]
        .into_iter()
        .flat_map(|(block, rows)| {
            rows.iter()
                .filter(|r| r.coefficient != 0.0)
                .map(move |r| CoefficientRow {
                    block,
                    name: &r.name,
                    kind: serde_json::to_value(r.kind)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    coefficient: r.coefficient,
                    rescaled: r.rescaled,
                })
        })
        .collect();
    let note = "nonzero coefficients; coefficient is on the model scale, rescaled = lambda * coefficient";
    if rows.is_empty() {
        write_atomic(
            &out.join("coefficients.csv"),
            format!("# {note}\nblock,name,kind,coefficient,rescaled\n").as_bytes(),
        )?;
    } else {
        write_csv(&out.join("coefficients.csv"), &[note], &rows)?;
    }
    if let (true, Some(res)) = (args.trace, &trace) {
        res.write_trace_csv(&out.join("trace.csv"))?;
    }

    let data_bytes = std::fs::read(&data)?;
    let mut hashed = cfg.clone();
    hashed.remove("output");
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": "fit",
        "config_hash": sha256_hex(hashed.canonical().as_bytes()),
        "data_sha256": sha256_hex(&data_bytes),
        "n": design.n(),
        "l_z": design.l_z(),
        "l_v": design.l_v(),
        "lambda_z": document.fit.lambda_z,
        "lambda_v": document.fit.lambda_v,
        "log_lambda_z": document.fit.log_lambda_z,
        "log_lambda_v": document.fit.log_lambda_v,
        "l": document.fit.nonzero,
        "a": document.fit.active_size,
        "gcv": document.fit.gcv,
        "tuned": trace.is_some(),
        "evaluations": trace.as_ref().map(|t| t.evaluations),
        "grid": settings.grid,
        "precision": settings.precision,
        "diagnostics": design.diagnostics,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(FitSummary { document, output: out })
}

#[derive(Serialize)]
struct RankedRow {
    rank: usize,
    treatment: String,
    ate_pp: String,
    estimable: bool,
}

pub fn cmd_effects(args: &EffectsArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.fit)
        .map_err(|e| Error::Config(format!("cannot read fit {}: {e}", args.fit.display())))?;
    let doc: FitDocument = serde_json::from_str(&text).map_err(|e| Error::Data(format!("invalid fit file: {e}")))?;
    let mut cfg = load_config(args.roles.config.as_deref())?;
    apply_roles(&mut cfg, &args.roles);
    let data = required_path(&cfg, "data")?;
    let out = required_path(&cfg, "output")?;
    let k = args.top_k.or(cfg.parsed::<usize>("top_k")?).unwrap_or(10);

    let raw = read_dataset(&data, &doc.design)?;
    let design = CausalDesign::build(&raw, &doc.design.spec()?)?;
    let fitted = doc.fit.restore(&design)?;
    std::fs::create_dir_all(&out)?;

    let ranked = effects::rank_treatments(&fitted, &design)?;
    let rows: Vec<RankedRow> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| RankedRow {
            rank: i + 1,
            treatment: r.label.clone(),
            ate_pp: r.ate.map_or_else(|| "NA".into(), |a| (100.0 * a).to_string()),
            estimable: r.ate.is_some(),
        })
        .collect();
    write_csv(&out.join("ranked_treatments.csv"), &[SCALE_NOTE], &rows)?;

    let est = effects::estimate(&fitted, &design)?;
    let mut buf = Vec::new();
    {
        use std::io::Write;
        writeln!(buf, "# {SCALE_NOTE}")?;
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut head = vec![
            "treatment".to_string(),
            "group".into(),
            "rank".into(),
            "row".into(),
            "cate_pp".into(),
        ];
        head.extend(design.covariate_names.iter().cloned());
        w.write_record(&head)?;
        for (j, &t) in est.treatments.iter().enumerate() {
            let c = est.per_unit_cate.column(j).to_owned();
            let g = extremes_from_cates(&c, &design, k);
            for (group, members) in [("highest", &g.highest), ("lowest", &g.lowest)] {
                for (rank, m) in members.iter().enumerate() {
                    let mut rec = vec![
                        design.treatment_label(t),
                        group.to_string(),
                        (rank + 1).to_string(),
                        (m.unit + 1).to_string(),
                        (100.0 * m.cate).to_string(),
                    ];
                    rec.extend(m.profile.iter().map(|v| v.to_string()));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
    }
    write_atomic(&out.join("group_extremes.csv"), &buf)?;

    if args.unit_cates {
        #[derive(Serialize)]
        struct UnitRow {
            row: usize,
            treatment: String,
            cate_pp: f64,
            cte: f64,
        }
        let mut rows = Vec::new();
        for i in 0..design.n() {
            for (j, &t) in est.treatments.iter().enumerate() {
                rows.push(UnitRow {
                    row: i + 1,
                    treatment: design.treatment_label(t),
                    cate_pp: 100.0 * est.per_unit_cate[[i, j]],
                    cte: est.per_unit_cte[[i, j]],
                });
            }
        }
        write_csv(&out.join("unit_cates.csv"), &[SCALE_NOTE], &rows)?;
    }

    let summary = serde_json::json!({
        "scale": SCALE_NOTE,
        "n": design.n(),
        "weighted": doc.design.weights.is_some(),
        "ate_pp": est
            .treatments
            .iter()
            .zip(&est.per_treatment_ate)
            .map(|(&t, &a)| serde_json::json!({"treatment": design.treatment_label(t), "ate_pp": 100.0 * a}))
            .collect::<Vec<_>>(),
    });
    write_json(&out.join("effects.json"), &summary)?;
    Ok(())
}

/// Effect of the treated arm for a binary-treatment design, percentage points.
pub fn binary_ate_pp(fit: &crate::svm::SvmFit, design: &CausalDesign) -> Result<f64> {
    Ok(100.0 * unit_cates(fit, design, Treatment::Treated)?.dot(&design.weights) / design.weights.sum())
}

/// Resolves simulation settings; `payoff_only` restricts to the second study.
pub fn simulation_config(args: &SimArgs, payoff_only: bool) -> Result<(MonteCarloConfig, PathBuf)> {
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.override_list("scenario", &args.scenario);
    cfg.override_list("sizes", &args.sizes);
    cfg.override_scalar("replicates", args.replicates.map(|v| v.to_string()));
    cfg.override_scalar("seed", args.seed.map(|v| v.to_string()));
    cfg.override_scalar("jobs", args.jobs.map(|v| v.to_string()));
    cfg.override_scalar("eval_n", args.eval_n.map(|v| v.to_string()));
    cfg.override_scalar("budget", args.budget.map(|v| v.to_string()));
    cfg.override_scalar("calibration_draws", args.calibration_draws.map(|v| v.to_string()));
    cfg.override_scalar("grid_min", args.grid_min.map(|v| v.to_string()));
    cfg.override_scalar("grid_max", args.grid_max.map(|v| v.to_string()));
    cfg.override_scalar("precision", args.precision.map(|v| v.to_string()));
    cfg.override_scalar("output", args.output.as_ref().map(|p| p.display().to_string()));

    let seed = cfg
        .parsed::<u64>("seed")?
        .ok_or_else(|| Error::Config("a seed is required for simulation".into()))?;
    let mut scenarios = Vec::new();
    for s in cfg.list("scenario") {
        scenarios.extend(ScenarioKind::parse(&s)?);
    }
    if payoff_only {
        if scenarios.iter().any(|k| k.is_first_study()) {
            return Err(Error::Config("the payoff command runs the second study only".into()));
        }
        scenarios = vec![ScenarioKind::Two];
    } else if scenarios.is_empty() {
        scenarios = vec![
            ScenarioKind::OneCorrect,
            ScenarioKind::OneMisspecified,
            ScenarioKind::Two,
        ];
    }
    let defaults = MonteCarloConfig::default();
    let sizes = cfg.parsed_list::<usize>("sizes")?;
    let mc = MonteCarloConfig {
        scenarios,
        sizes: if sizes.is_empty() { defaults.sizes } else { sizes },
        replicates: cfg.parsed("replicates")?.unwrap_or(defaults.replicates),
        seed,
        eval_n: cfg.parsed("eval_n")?.unwrap_or(defaults.eval_n),
        budget: cfg.parsed("budget")?,
        jobs: cfg.parsed("jobs")?.unwrap_or(defaults.jobs),
        calibration_draws: cfg.parsed("calibration_draws")?.unwrap_or(defaults.calibration_draws),
        search: grid(&cfg)?,
    };
    Ok((mc, required_path(&cfg, "output")?))
}

/// Runs the studies and writes the bundle. Fails with exit code 4 when more
/// than a tenth of the replicates in any cell failed; the bundle is still written.
pub fn cmd_simulate(args: &SimArgs, payoff_only: bool) -> Result<SimOutcome> {
    let (mc, out) = simulation_config(args, payoff_only)?;
    let outcome = run_monte_carlo(&mc)?;
    outcome.write_bundle(&out)?;
    let worst = outcome.worst_failure_rate();
    if worst > 0.1 {
        return Err(Error::Simulation(format!(
            "{:.0}% of replicates failed in at least one cell; see manifest.json",
            100.0 * worst
        )));
    }
    Ok(outcome)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Effects(a) => cmd_effects(a),
        Command::Simulate(a) => cmd_simulate(a, false).map(|_| ()),
        Command::Payoff(a) => cmd_simulate(a, true).map(|_| ()),
    }
}
