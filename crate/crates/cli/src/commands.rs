use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use nested_fusion::baselines::{fit_baseline, BaselineConfig, BaselineKind};
use nested_fusion::dataset::{generate_synthetic, read_dataset, write_dataset, write_labels, SynthConfig};
use nested_fusion::diff::OptimizerConfig;
use nested_fusion::eval::{
    evaluate, latent_heatmap, region_separation, spatial_color_export, spatial_points, subsample, EvalReport,
    RegionComparison, RegionSelection, SeparationSettings, VizExport, VIZ_FORMAT_VERSION,
};
use nested_fusion::model::{draw_noise, train_with, ModelConfig, StepRecord};
use nested_fusion::{Error, MultiScaleDataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::AnyModel;
use crate::{
    CliError, Command, EncodeArgs, EvalArgs, ExportArgs, GenSynthArgs, ModelChoice, ReconstructArgs, TrainArgs,
};

type CmdResult = Result<(), CliError>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Train(a) => train(&a),
        Command::Encode(a) => encode(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Eval(a) => eval(&a),
        Command::ExportViz(a) => export_viz(&a),
        Command::Serve(a) => crate::server::serve(&a),
    }
}

/// `<path>.<suffix>`, keeping the original extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    args: &'a A,
    resolved: R,
}

fn echo(path: &Path, command: &str, args: &impl Serialize, resolved: impl Serialize) -> Result<(), Error> {
    write_json(path, &Echo { command, args, resolved })
}

fn load_dataset(path: &Path) -> Result<MultiScaleDataset, Error> {
    let ds = read_dataset(path)?;
    for w in ds.validate().into_result()? {
        eprintln!("warning: {w}");
    }
    Ok(ds)
}

fn synth_config(a: &GenSynthArgs) -> SynthConfig {
    let d = SynthConfig::default();
    SynthConfig {
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        pitch: a.pitch.unwrap_or(d.pitch),
        classes: a.classes.unwrap_or(d.classes),
        base_dim: a.base_dim.unwrap_or(d.base_dim),
        parent_dim: a.parent_dim.unwrap_or(d.parent_dim),
        parent_spacing: a.parent_spacing.unwrap_or(d.parent_spacing),
        radius: a.radius.unwrap_or(d.radius),
        base_noise: a.base_noise.or(a.noise).unwrap_or(d.base_noise),
        parent_noise: a.parent_noise.or(a.noise).unwrap_or(d.parent_noise),
        seed: a.seed.unwrap_or(d.seed),
    }
}

/// Column indices whose values are all identical.
fn constant_columns(records: &ndarray::Array2<f32>) -> Vec<usize> {
    (0..records.ncols())
        .filter(|&j| {
            let col = records.column(j);
            col.iter().all(|&v| v == col[0])
        })
        .collect()
}

/// Human-readable dataset summary; zero-variance layers are flagged.
pub(crate) fn summary(ds: &MultiScaleDataset) -> String {
    let mut out = format!("dataset '{}'\n", ds.name);
    for s in &ds.scales {
        out += &format!("  scale '{}': {} records x {} dims\n", s.id, s.len(), s.dim());
    }
    for n in &ds.nestings {
        let parents = n.edges.len().max(1);
        out += &format!(
            "  nesting '{}' -> '{}': {} edges, {:.2} children per parent\n",
            n.parent,
            n.child,
            n.total_edges(),
            n.total_edges() as f64 / parents as f64
        );
    }
    for s in &ds.scales {
        let constant = constant_columns(&s.records);
        if s.len() > 0 && constant.len() == s.dim() {
            out += &format!("  WARNING zero variance: layer '{}' is constant in all {} dims\n", s.id, s.dim());
        } else if !constant.is_empty() {
            out += &format!("  WARNING zero variance: layer '{}' dims {:?} are constant\n", s.id, constant);
        }
    }
    out
}

fn gen_synth(a: &GenSynthArgs) -> CmdResult {
    let cfg = synth_config(a);
    let synth = generate_synthetic(&cfg)?;
    write_dataset(&synth.dataset, &a.out)?;
    write_labels(&synth.labels, &a.out)?;
    echo(&a.out.join("gen-synth.config.json"), "gen-synth", a, &cfg)?;
    print!("{}", summary(&synth.dataset));
    Ok(())
}

fn baseline_kind(m: ModelChoice) -> Option<BaselineKind> {
    match m {
        ModelChoice::NestedFusion => None,
        ModelChoice::JointPca => Some(BaselineKind::JointPca),
        ModelChoice::JointVae => Some(BaselineKind::JointVae),
        ModelChoice::ConcatPca => Some(BaselineKind::ConcatPca),
        ModelChoice::ConcatVae => Some(BaselineKind::ConcatVae),
    }
}

/// Appends one CSV row per step and flushes, so a failed run keeps its log.
struct LossLog {
    writer: csv::Writer<File>,
    path: PathBuf,
    error: Option<Error>,
}

impl LossLog {
    fn create(path: &Path, nll_columns: Vec<String>) -> Result<Self, Error> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let writer = csv::Writer::from_writer(file);
        let mut header = vec!["step".to_string(), "loss".into(), "kl".into()];
        header.extend(nll_columns);
        let mut log = Self {
            writer,
            path: path.to_owned(),
            error: None,
        };
        log.write(&header);
        log.error.take().map_or(Ok(log), Err)
    }

    fn write(&mut self, fields: &[String]) {
        if self.error.is_some() {
            return;
        }
        let res = self.writer.write_record(fields).and_then(|_| Ok(self.writer.flush()?));
        if let Err(e) = res {
            self.error = Some(Error::io(&self.path, std::io::Error::other(e)));
        }
    }

    fn record(&mut self, r: &StepRecord) {
        let mut fields = vec![r.step.to_string(), r.loss.to_string(), r.kl.to_string()];
        fields.extend(r.nll.iter().map(|v| v.to_string()));
        self.write(&fields);
    }

    fn finish(mut self) -> Result<(), Error> {
        self.error.take().map_or(Ok(()), Err)
    }
}

#[derive(Serialize)]
struct TrainResolved {
    model: ModelChoice,
    loss_log: PathBuf,
    optimizer: OptimizerConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_config: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_config: Option<BaselineConfig>,
}

fn train(a: &TrainArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let opt = OptimizerConfig {
        learning_rate: a.lr,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    opt.validate()?;
    let latent_dim = a.latent_dim as usize;
    let loss_path = a.loss_log.clone().unwrap_or_else(|| sibling(&a.out, "loss.csv"));
    let kind = baseline_kind(a.model);
    let (model_config, baseline_config) = match kind {
        None => {
            let mut cfg = match &a.model_config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<ModelConfig>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => ModelConfig::default(),
            };
            cfg.latent_dim = latent_dim;
            cfg.kl_weight = a.kl_weight;
            cfg.seed = a.model_seed;
            (Some(cfg), None)
        }
        Some(_) => {
            if a.model_config.is_some() {
                return Err(CliError::usage("--model-config applies to nested-fusion only"));
            }
            let cfg = BaselineConfig {
                latent_dim,
                budget: a.budget,
                kl_weight: a.kl_weight,
                seed: a.model_seed,
                ..BaselineConfig::default()
            };
            (None, Some(cfg))
        }
    };
    echo(
        &sibling(&a.out, "config.json"),
        "train",
        a,
        TrainResolved {
            model: a.model,
            loss_log: loss_path.clone(),
            optimizer: opt.clone(),
            model_config: model_config.clone(),
            baseline_config: baseline_config.clone(),
        },
    )?;

    // Fusion models log the likelihood per scale, baselines over the flattened row.
    let nll_columns = match kind {
        None => ds.scales.iter().map(|s| format!("nll_{}", s.id)).collect(),
        Some(_) => vec!["nll".into()],
    };
    let mut log = LossLog::create(&loss_path, nll_columns)?;
    let result = match (kind, &model_config, &baseline_config) {
        (None, Some(cfg), _) => train_with(&ds, cfg, &opt, |r| log.record(r)).map(|o| AnyModel::Fusion(o.checkpoint)),
        // PCA has no steps, so its log carries the header only.
        (Some(kind), _, Some(cfg)) => {
            fit_baseline(&ds, kind, cfg, &opt, |r| log.record(r)).map(|(m, _)| AnyModel::Baseline(m))
        }
        _ => unreachable!("configs follow the model kind"),
    };
    log.finish()?;
    let model = result?;
    model.save(&a.out)?;
    println!("saved {} checkpoint to {}", model.name(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedLatent {
    pub group: usize,
    /// Base records this latent stands for.
    pub records: Vec<usize>,
    pub mu: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    pub sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeOutput {
    pub model: String,
    pub dataset: String,
    pub latent_dim: usize,
    pub noise_seed: Option<u64>,
    pub latents: Vec<EncodedLatent>,
}

fn encode(a: &EncodeArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let model = AnyModel::load(&a.checkpoint)?;
    let groups = ds.scan_groups()?;
    let mut latents = Vec::new();
    match &model {
        AnyModel::Fusion(ckpt) => {
            ckpt.check_dataset(&ds)?;
            let mut rng = a.noise_seed.map(ChaCha8Rng::seed_from_u64);
            for g in &groups {
                let noise = rng.as_mut().map(|r| draw_noise(r, g.base_members().len(), ckpt.latent_dim()));
                for e in ckpt.encode(g, noise.as_ref())? {
                    latents.push(EncodedLatent {
                        group: g.root_index(),
                        records: vec![e.base_index],
                        mu: e.mu,
                        sigma: Some(e.sigma),
                        sample: e.sample,
                    });
                }
            }
        }
        AnyModel::Baseline(m) => {
            if a.noise_seed.is_some() {
                return Err(CliError::usage("--noise-seed applies to nested-fusion checkpoints only"));
            }
            for g in &groups {
                for (code, records) in m.encode_group(g)? {
                    latents.push(EncodedLatent {
                        group: g.root_index(),
                        records,
                        mu: code.clone(),
                        sigma: None,
                        sample: code,
                    });
                }
            }
        }
    }
    echo(&sibling(&a.out, "config.json"), "encode", a, ())?;
    write_json(
        &a.out,
        &EncodeOutput {
            model: model.name().into(),
            dataset: ds.name.clone(),
            latent_dim: model.latent_dim(),
            noise_seed: a.noise_seed,
            latents,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOutput {
    pub scale: String,
    pub covered: Vec<bool>,
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOutput {
    pub model: String,
    pub dataset: String,
    pub layers: Vec<LayerOutput>,
}

fn reconstruct(a: &ReconstructArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let model = AnyModel::load(&a.checkpoint)?;
    let preds = model.predictions(&ds)?;
    let layers = ds
        .scales
        .iter()
        .zip(preds.layers.iter().zip(&preds.coverage))
        .map(|(s, (p, c))| LayerOutput {
            scale: s.id.clone(),
            covered: c.clone(),
            predictions: p.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    echo(&sibling(&a.out, "config.json"), "reconstruct", a, ())?;
    write_json(
        &a.out,
        &ReconstructOutput {
            model: model.name().into(),
            dataset: ds.name.clone(),
            layers,
        },
    )?;
    Ok(())
}

/// Region selections plus the pairs to compare; no pairs means every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub regions: Vec<RegionSelection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<[String; 2]>,
}

impl RegionsFile {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for (i, r) in file.regions.iter().enumerate() {
            if file.regions[..i].iter().any(|o| o.label == r.label) {
                return Err(Error::Validation(format!("duplicate region label '{}'", r.label)));
            }
        }
        Ok(file)
    }

    fn find(&self, label: &str) -> Result<&RegionSelection, Error> {
        self.regions
            .iter()
            .find(|r| r.label == label)
            .ok_or_else(|| Error::InvalidReference(format!("no region labelled '{label}'")))
    }

    pub fn pairs(&self) -> Result<Vec<(&RegionSelection, &RegionSelection)>, Error> {
        if self.pairs.is_empty() {
            let n = self.regions.len();
            return Ok((0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| (&self.regions[i], &self.regions[j]))
                .collect());
        }
        self.pairs.iter().map(|[a, b]| Ok((self.find(a)?, self.find(b)?))).collect()
    }
}

/// Spatial records built exactly as export-viz builds them, so separations
/// computed here match the service's.
fn spatial_for(ds: &MultiScaleDataset, model: &AnyModel) -> Result<nested_fusion::eval::SpatialExport, Error> {
    let lat = model.latents(ds)?;
    let enc: Vec<(usize, Vec<f64>)> = (0..lat.base.nrows())
        .filter(|&i| lat.covered[i])
        .map(|i| (i, lat.base.row(i).to_vec()))
        .collect();
    spatial_color_export(ds, &enc)
}

fn separations(
    ds: &MultiScaleDataset,
    model: &AnyModel,
    regions: &RegionsFile,
    projections: usize,
    seed: u64,
) -> Result<Vec<RegionComparison>, Error> {
    let points = spatial_points(&spatial_for(ds, model)?.records);
    regions
        .pairs()?
        .into_iter()
        .map(|(a, b)| region_separation(&points, a, b, projections, seed))
        .collect()
}

fn eval_one(ds: &MultiScaleDataset, path: &Path, a: &EvalArgs, regions: Option<&RegionsFile>) -> Result<EvalReport, Error> {
    let model = AnyModel::load(path)?;
    let mut report = evaluate(ds, model.name(), model.latent_dim(), &model.predictions(ds)?)?;
    if let Some(r) = regions {
        report.separations = separations(ds, &model, r, a.projections, a.separation_seed)?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Rows ordered by R²_q, highest first.
pub(crate) fn comparison_table(reports: &[(PathBuf, EvalReport)]) -> String {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&i, &j| reports[j].1.r2_q.total_cmp(&reports[i].1.r2_q));
    let mut out = format!(
        "{:<16} {:>4} {:>8} {:>8} {:>12}  {}\n",
        "model", "d_z", "R2_q", "R2_p", "R2_q(mean)", "checkpoint"
    );
    for i in order {
        let (path, r) = &reports[i];
        out += &format!(
            "{:<16} {:>4} {:>8.4} {:>8.4} {:>12}  {}\n",
            r.model,
            r.latent_dim,
            r.r2_q,
            r.r2_p,
            fmt_opt(r.r2_q_parent_mean),
            path.display()
        );
    }
    out
}

fn eval(a: &EvalArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let regions = a.regions.as_deref().map(RegionsFile::read).transpose()?;
    echo(&sibling(&a.out, "config.json"), "eval", a, ())?;
    if let Some(path) = &a.checkpoint {
        let report = eval_one(&ds, path, a, regions.as_ref())?;
        write_json(&a.out, &report)?;
        print!("{}", comparison_table(&[(path.clone(), report.clone())]));
        for s in &report.separations {
            println!("W({}, {}) = {:.6} [{}]", s.region_a, s.region_b, s.distance, s.method);
        }
        return Ok(());
    }
    let reports = a
        .compare
        .iter()
        .map(|p| eval_one(&ds, p, a, regions.as_ref()).map(|r| (p.clone(), r)))
        .collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&reports);
    let mut sorted: Vec<&EvalReport> = reports.iter().map(|(_, r)| r).collect();
    sorted.sort_by(|x, y| y.r2_q.total_cmp(&x.r2_q));
    write_json(&a.out, &sorted)?;
    print!("{table}");
    Ok(())
}

/// Builds the viewer document for a trained model.
pub fn build_export(
    ds: &MultiScaleDataset,
    model: &AnyModel,
    a: &ExportArgs,
    regions: Vec<RegionSelection>,
) -> Result<VizExport, Error> {
    let d = model.latent_dim();
    if d > 3 {
        return Err(Error::Unsupported(format!("export needs a latent dimension of 1, 2 or 3, got {d}")));
    }
    let lat = model.latents(ds)?;
    let heatmap = (d == 2).then(|| latent_heatmap(&lat.points, a.bins)).transpose()?;
    let spatial = spatial_for(ds, model)?;
    let points = spatial_points(&spatial.records);
    for r in &regions {
        r.resolve(&points)?;
    }
    Ok(VizExport {
        version: VIZ_FORMAT_VERSION.into(),
        model: model.name().into(),
        dataset: ds.name.clone(),
        latent_dim: d,
        latent_points: subsample(&lat.point_indices, &lat.points, a.max_points, a.seed),
        heatmap,
        spatial: spatial.records,
        color_mapping: spatial.color_mapping,
        regions,
        separation: SeparationSettings {
            projections: a.projections,
            seed: a.separation_seed,
        },
    })
}

fn export_viz(a: &ExportArgs) -> CmdResult {
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let ds = load_dataset(&a.data)?;
    let model = AnyModel::load(&a.checkpoint)?;
    let regions = match &a.regions {
        Some(p) => RegionsFile::read(p)?.regions,
        None => Vec::new(),
    };
    let export = build_export(&ds, &model, a, regions)?;
    echo(&sibling(&a.out, "config.json"), "export-viz", a, ())?;
    let text = serde_json::to_string(&export).map_err(Error::from)?;
    let mut f = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "exported {} latent points ({} spatial records) to {}",
        export.latent_points.values.len(),
        export.spatial.len(),
        a.out.display()
    );
    Ok(())
}
