//! The `csegeo` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::Mat;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cseb;
use crate::embed::{embedding_colors, expand, predict, transfer, verify_transfer, EmbeddingSet};
use crate::error::{CseError, Result};
use crate::eval::{evaluate_with, DEFAULT_THRESHOLDS};
use crate::fitter::{
    accuracy, fit, labeled_vertices, make_synthetic, make_teacher, FitConfig, LossKind,
    Supervision, SyntheticConfig,
};
use crate::fmap::{match_meshes, FunctionalMap, SymmetryPair, ZoomOutConfig};
use crate::geodesics::{normalize_mesh, save_soft_labels, Kernel, SoftLabelCache, NORMALIZED_DIAMETER};
use crate::io::{export_vertex_colors, load_mesh, write_obj};
use crate::lbo::{build_operators, eigenbasis};
use crate::mesh::{CorrespondenceSet, Mesh, SymmetryMap};

#[derive(Parser, Debug)]
#[command(name = "csegeo", version, about = "Spectral surface embeddings on triangle meshes")]
struct Cli {
    /// Print a machine-readable JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the Laplace-Beltrami eigenbasis of a mesh.
    Lbo(LboArgs),
    /// Refine a correspondence from seed pairs with ZoomOut.
    Zoomout(ZoomoutArgs),
    /// Move an embedding across a functional map.
    Transfer(TransferArgs),
    /// Precompute geodesic soft-label fields.
    Softlabels(SoftlabelArgs),
    /// Fit an embedding to synthetic supervision.
    Fit(FitArgs),
    /// Geodesic error of predicted vertices.
    Eval(EvalArgs),
    /// Write a PLY colored by the principal components of an embedding.
    ExportColors(ExportArgs),
    /// Rescale a mesh to a fixed geodesic diameter.
    Normalize(NormalizeArgs),
}

#[derive(Args, Debug)]
struct LboArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value_t = 256)]
    num_eigen: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ZoomoutArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    /// Seed correspondences as JSON.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, requires = "sym_dst")]
    sym_src: Option<PathBuf>,
    #[arg(long, requires = "sym_src")]
    sym_dst: Option<PathBuf>,
    /// Dense ground-truth correspondences, for per-level recovery rates.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    start: usize,
    #[arg(long, default_value_t = 256)]
    stop: usize,
    #[arg(long, default_value_t = 4)]
    step: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    projection_steps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Dense point map JSON; defaults to the output path with extension
    /// `pointmap.json`.
    #[arg(long)]
    pointmap: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// With `--dst-basis`, check `U′CÊ` against `U′CUᵀA(UÊ)`.
    #[arg(long, requires = "dst_basis")]
    src_basis: Option<PathBuf>,
    #[arg(long, requires = "src_basis")]
    dst_basis: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Linear,
    Squared,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => Kernel::Linear,
            KernelArg::Squared => Kernel::Squared,
        }
    }
}

#[derive(Args, Debug)]
struct SoftlabelArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Center vertices; all vertices when omitted.
    #[arg(long, value_delimiter = ',')]
    vertices: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Linear)]
    kernel: KernelArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value_t = NORMALIZED_DIAMETER)]
    target: f64,
    /// Output OBJ.
    #[arg(long)]
    out: PathBuf,
}

/// Contents of the `fit --config` file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitFile {
    pub teacher: TeacherSpec,
    pub synthetic: SyntheticSpec,
    pub fit: FitConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSpec {
    pub dim: usize,
    pub bandwidth: usize,
    pub amplitude: f64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            bandwidth: 32,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub samples_per_vertex: usize,
    pub noise_std: f64,
    pub label_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples_per_vertex: 1,
            noise_std: 0.0,
            label_fraction: 1.0,
        }
    }
}

/// Vertex index lists: a bare array or a point-map object.
#[derive(Deserialize)]
#[serde(untagged)]
enum IndexFile {
    Plain(Vec<usize>),
    Map { assignment: Vec<usize> },
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    Ok(match serde_json::from_str(&fs::read_to_string(path)?)? {
        IndexFile::Plain(v) => v,
        IndexFile::Map { assignment } => assignment,
    })
}

fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    CorrespondenceSet::from_json(&fs::read_to_string(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Report plus a one-line human summary.
struct Outcome {
    report: Value,
    summary: String,
}

/// Run the CLI on `args` (including the program name) and return the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if cli.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&out.report).expect("report serializes")
                );
            } else {
                println!("{}", out.summary);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Lbo(a) => lbo(a),
        Command::Zoomout(a) => zoomout(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Softlabels(a) => softlabels(a),
        Command::Fit(a) => fit_cmd(a, cli.seed),
        Command::Eval(a) => eval_cmd(a),
        Command::ExportColors(a) => export_colors(a),
        Command::Normalize(a) => normalize(a),
    }
}

fn lbo(a: &LboArgs) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let ops = build_operators(&mesh)?;
    let basis = eigenbasis(&ops, a.num_eigen)?;
    cseb::save_basis(&a.out, &basis)?;
    let residual = basis.residuals(&ops).into_iter().fold(0.0, f64::max);
    let report = json!({
        "mesh": mesh.id(),
        "vertices": mesh.num_vertices(),
        "order": basis.order(),
        "eigenvalues": basis.eigenvalues,
        "orthonormality_error": basis.orthonormality_error(),
        "max_relative_residual": residual,
    });
    Ok(Outcome {
        summary: format!(
            "wrote {} eigenpairs of {} ({} vertices) to {}",
            basis.order(),
            mesh.id(),
            mesh.num_vertices(),
            a.out.display()
        ),
        report,
    })
}

fn load_symmetry(path: &Path, mesh: &Mesh) -> Result<SymmetryMap> {
    SymmetryMap::from_correspondences(mesh, &read_correspondences(path)?)
}

fn zoomout(a: &ZoomoutArgs) -> Result<Outcome> {
    let src = load_mesh(&a.src)?;
    let dst = load_mesh(&a.dst)?;
    let seeds = read_correspondences(&a.seeds)?;
    let symmetry = match (&a.sym_src, &a.sym_dst) {
        (Some(s), Some(t)) => Some((load_symmetry(s, &src)?, load_symmetry(t, &dst)?)),
        _ => None,
    };
    let truth = match &a.truth {
        Some(path) => {
            let set = read_correspondences(path)?;
            set.validate(&src, &dst)?;
            let mut t = vec![usize::MAX; dst.num_vertices()];
            for &[k, k2] in &set.pairs {
                t[k2] = k;
            }
            if t.contains(&usize::MAX) {
                return Err(CseError::InvalidArgument(
                    "ground truth must cover every destination vertex".into(),
                ));
            }
            Some(t)
        }
        None => None,
    };
    let config = ZoomOutConfig {
        start: a.start,
        stop: a.stop,
        step: a.step,
        alpha: a.alpha,
        beta: a.beta,
        gamma: a.gamma,
        projection_steps: a.projection_steps,
    };
    let pair = symmetry.as_ref().map(|(s, t)| SymmetryPair {
        src: s.pairing(),
        dst: t.pairing(),
    });
    let matched = match_meshes(&src, &dst, &seeds, &config, pair, truth.as_deref())?;
    let result = matched.result;
    result.map.save(&a.out)?;
    let pm_path = a
        .pointmap
        .clone()
        .unwrap_or_else(|| a.out.with_extension("pointmap.json"));
    write_json(&pm_path, &result.pointmap)?;
    let report = json!({
        "src_mesh": src.id(),
        "dst_mesh": dst.id(),
        "seeds": seeds.len(),
        "config": config,
        "levels": result.levels,
        "final_recovery": result.levels.last().and_then(|l| l.recovery),
        "map": a.out,
        "pointmap": pm_path,
    });
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let recovery = match result.levels.last().and_then(|l| l.recovery) {
        Some(r) => format!(", recovery {r:.4}"),
        None => String::new(),
    };
    Ok(Outcome {
        summary: format!(
            "wrote {}x{} map to {} and point map to {}{recovery}",
            result.map.c.nrows(),
            result.map.c.ncols(),
            a.out.display(),
            pm_path.display()
        ),
        report,
    })
}

fn transfer_cmd(a: &TransferArgs) -> Result<Outcome> {
    let emb = EmbeddingSet::load(&a.emb)?;
    let map = FunctionalMap::load(&a.map)?;
    let moved = transfer(&emb, &map)?;
    moved.save(&a.out)?;
    let verification = match (&a.src_basis, &a.dst_basis) {
        (Some(s), Some(d)) => Some(verify_transfer(
            &emb,
            &map,
            &cseb::load_basis(s)?,
            &cseb::load_basis(d)?,
        )?),
        _ => None,
    };
    Ok(Outcome {
        summary: format!(
            "wrote {}x{} embedding for {} to {}",
            moved.order(),
            moved.dim(),
            moved.basis,
            a.out.display()
        ),
        report: json!({
            "src_mesh": emb.basis,
            "dst_mesh": moved.basis,
            "order": moved.order(),
            "dim": moved.dim(),
            "identity_error": verification,
        }),
    })
}

fn softlabels(a: &SoftlabelArgs) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let centers: Vec<usize> = if a.vertices.is_empty() {
        (0..mesh.num_vertices()).collect()
    } else {
        a.vertices.clone()
    };
    let cache = SoftLabelCache::new(&mesh);
    let fields: Vec<_> = cache
        .get_many(&centers, a.sigma, a.kernel.into())?
        .into_iter()
        .map(|f| (*f).clone())
        .collect();
    save_soft_labels(&a.out, &fields)?;
    Ok(Outcome {
        summary: format!(
            "wrote {} soft-label fields (sigma {}) to {}",
            fields.len(),
            a.sigma,
            a.out.display()
        ),
        report: json!({
            "mesh": mesh.id(),
            "sigma": a.sigma,
            "kernel": Kernel::from(a.kernel),
            "vertices": centers,
        }),
    })
}

fn fit_cmd(a: &FitArgs, seed: u64) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let basis = cseb::load_basis(&a.basis)?;
    if &basis.mesh != mesh.id() {
        return Err(CseError::Mismatch(format!(
            "basis belongs to {}, mesh is {}",
            basis.mesh,
            mesh.id()
        )));
    }
    let file: FitFile = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    let teacher = make_teacher(
        &basis,
        file.teacher.dim,
        file.teacher.bandwidth,
        file.teacher.amplitude,
        seed,
    )?;
    let synthetic = SyntheticConfig {
        mesh_id: basis.mesh.clone(),
        samples_per_vertex: file.synthetic.samples_per_vertex,
        noise_std: file.synthetic.noise_std,
        label_fraction: file.synthetic.label_fraction,
        seed: seed.wrapping_add(1),
    };
    let batch = make_synthetic(&synthetic, &teacher, &basis)?;
    let config = FitConfig {
        seed: seed.wrapping_add(2),
        ..file.fit.clone()
    };
    let cache = match config.loss {
        LossKind::Soft { .. } => Some(SoftLabelCache::new(&mesh)),
        LossKind::Hard => None,
    };
    let sup = Supervision::for_loss(batch.clone(), config.loss, cache.as_ref())?;
    let result = fit(&basis, &sup, &config)?;
    result.embedding.save(&a.out)?;

    // every vertex queried with its noiseless teacher feature
    let rows = expand(&teacher, &basis)?;
    let e = expand(&result.embedding, &basis)?;
    let predicted = predict(e.as_ref(), rows.as_ref());
    let truth: Vec<usize> = (0..mesh.num_vertices()).collect();
    let all = evaluate_with(&mesh, &predicted, &truth, &DEFAULT_THRESHOLDS)?;
    let labeled = labeled_vertices(
        mesh.num_vertices(),
        synthetic.label_fraction,
        synthetic.seed,
    );
    let train_accuracy = accuracy(&result.embedding, &basis, &batch)?;
    let report = json!({
        "mesh": mesh.id(),
        "config": file,
        "seed": seed,
        "labeled_vertices": labeled.len(),
        "samples": batch.len(),
        "loss_history": result.history,
        "final_loss": result.final_loss,
        "train_accuracy": train_accuracy,
        "vertex_accuracy": truth.iter().zip(&predicted).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64,
        "mean_geodesic_error": all.mean_geodesic_error,
        "geodesic_error_quantiles": {
            "p50": all.quantile(0.5),
            "p90": all.quantile(0.9),
            "p99": all.quantile(0.99),
        },
        "accuracy_at": all.accuracy_at,
        "warnings": all.warnings,
    });
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(Outcome {
        summary: format!(
            "final loss {:.6}, train accuracy {:.4}, mean geodesic error {:.4}; wrote {}",
            result.final_loss,
            train_accuracy,
            all.mean_geodesic_error,
            a.out.display()
        ),
        report,
    })
}

fn eval_cmd(a: &EvalArgs) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let predicted = read_indices(&a.predicted)?;
    let truth = read_indices(&a.truth)?;
    let k = mesh.num_vertices();
    if let Some(&bad) = predicted.iter().chain(&truth).find(|&&v| v >= k) {
        return Err(CseError::InvalidArgument(format!(
            "vertex {bad} out of range ({k} vertices)"
        )));
    }
    let report = evaluate_with(&mesh, &predicted, &truth, &a.thresholds)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let acc: Vec<String> = report
        .accuracy_at
        .iter()
        .map(|t| format!("{}: {:.4}", t.threshold, t.accuracy))
        .collect();
    Ok(Outcome {
        summary: format!(
            "mean geodesic error {:.6} over {} points; accuracy {}",
            report.mean_geodesic_error,
            predicted.len(),
            acc.join(", ")
        ),
        report: serde_json::to_value(&report)?,
    })
}

fn export_colors(a: &ExportArgs) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let basis = cseb::load_basis(&a.basis)?;
    if &basis.mesh != mesh.id() {
        return Err(CseError::Mismatch(format!(
            "basis belongs to {}, mesh is {}",
            basis.mesh,
            mesh.id()
        )));
    }
    let emb = EmbeddingSet::load(&a.emb)?;
    let e: Mat<f64> = expand(&emb, &basis)?;
    let colors = embedding_colors(e.as_ref());
    fs::write(&a.out, export_vertex_colors(&mesh, &colors)?)?;
    Ok(Outcome {
        summary: format!("wrote {} colored vertices to {}", colors.len(), a.out.display()),
        report: json!({ "mesh": mesh.id(), "vertices": colors.len(), "out": a.out }),
    })
}

fn normalize(a: &NormalizeArgs) -> Result<Outcome> {
    let mesh = load_mesh(&a.mesh)?;
    let (out, scale) = normalize_mesh(&mesh, a.target)?;
    fs::write(&a.out, write_obj(&out))?;
    Ok(Outcome {
        summary: format!("scaled by {scale} to diameter {}; wrote {}", a.target, a.out.display()),
        report: json!({
            "mesh": mesh.id(),
            "normalized_mesh": out.id(),
            "scale": scale,
            "target_diameter": a.target,
        }),
    })
}
