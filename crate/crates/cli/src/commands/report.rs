//! `cw report`: interpretability measurements from a checkpoint plus data,
//! emitted as CSV (stdout or --out) with a JSON summary beside --out.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use cw_core::layer::ActivationReducer;
use cw_core::metrics::{
    axis_correlation, concept_importance, joint_histogram, occlusion_map, percentile_trajectory,
    purity_auc, similarity_matrices, slot_activations, topk_activated, ImportanceOptions,
    LayerActivations, LossKind,
};
use cw_core::model::Model;
use cw_core::synth::Dataset;
use cw_core::Tensor;

use crate::checkpoint::load;
use crate::commands::load_data;
use crate::error::{CliError, Result};
use crate::logging::debug;
use crate::manifest::Manifest;

#[derive(Debug, Clone, clap::Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// topk | similarity | correlation | auc | importance | hist2d |
    /// trajectory | occlusion
    #[arg(long)]
    pub metric: String,
    /// CSV output path (stdout when absent); a JSON summary is written next
    /// to it with extension .json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Axis for topk/importance/occlusion (defaults to every concept axis).
    #[arg(long)]
    pub axis: Option<usize>,
    /// Axis pair for hist2d/trajectory, as `i,j`.
    #[arg(long, default_value = "0,1")]
    pub axes: String,
    #[arg(long = "top-k", default_value_t = 10)]
    pub top_k: usize,
    /// Histogram grid resolution.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Occlusion patch side; defaults to a quarter of the image side.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Occlusion stride; defaults to ceil(side / 12).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Receptive-field quantile on occlusion drops.
    #[arg(long, default_value_t = 0.9)]
    pub quantile: f64,
    /// Sample id for trajectory/occlusion.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Importance loss: multiclass | balanced
    #[arg(long, default_value = "multiclass")]
    pub loss: String,
    /// Target class for the balanced binary loss.
    #[arg(long = "target-class", default_value_t = 0)]
    pub target_class: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Statistics mode for the correlation report.
    #[arg(long, default_value = "eval", value_parser = ["eval", "train"])]
    pub mode: String,
}

#[derive(Serialize)]
struct Summary {
    metric: String,
    checkpoint: String,
    rows: usize,
    seed: u64,
    notes: Vec<String>,
    values: serde_json::Value,
}

struct ReportOutput {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    notes: Vec<String>,
    values: serde_json::Value,
}

fn model_reducer(model: &Model) -> ActivationReducer {
    model
        .cw_layer()
        .map(|cw| cw.reducer)
        .unwrap_or(ActivationReducer::MaxpoolMean { pool: 2 })
}

fn report_dataset(data: &crate::commands::LoadedData) -> &Dataset {
    data.eval.as_ref().unwrap_or(&data.train)
}

fn parse_axes(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!("bad --axes '{}'", text)));
    }
    let i = parts[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad axis '{}'", parts[0])))?;
    let j = parts[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad axis '{}'", parts[1])))?;
    Ok((i, j))
}

/// Per-concept activation matrices (rows are samples).
fn concept_activations(
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<Vec<Vec<Vec<f64>>>> {
    data.bank
        .concepts
        .iter()
        .map(|set| slot_activations(model, &set.samples, reducer).map_err(CliError::from))
        .collect()
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let checkpoint = load(&args.checkpoint)?;
    let manifest = Manifest::load(&args.manifest)?;
    let data = load_data(&manifest)?;
    let model = &checkpoint.model;
    let reducer = model_reducer(model);
    debug!("report {} on {:?}", args.metric, model.arch);

    let output = match args.metric.as_str() {
        "topk" => report_topk(args, model, &data, reducer)?,
        "similarity" => report_similarity(model, &data, reducer)?,
        "correlation" => report_correlation(args, model, &data, reducer)?,
        "auc" => report_auc(model, &data, reducer)?,
        "importance" => report_importance(args, model, &data)?,
        "hist2d" => report_hist2d(args, model, &data, reducer)?,
        "trajectory" => report_trajectory(args, model, &data, reducer)?,
        "occlusion" => report_occlusion(args, model, &data, reducer)?,
        other => return Err(CliError::UnknownSelector(other.to_string())),
    };

    emit(args, output)
}

fn emit(args: &ReportArgs, output: ReportOutput) -> Result<()> {
    let csv_bytes = {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&output.header)?;
        for row in &output.rows {
            writer.write_record(row)?;
        }
        writer
            .into_inner()
            .map_err(|e| CliError::Data(e.to_string()))?
    };
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv_bytes)?;
            let summary = Summary {
                metric: args.metric.clone(),
                checkpoint: args.checkpoint.display().to_string(),
                rows: output.rows.len(),
                seed: args.seed,
                notes: output.notes,
                values: output.values,
            };
            let json_path = path.with_extension("json");
            let mut file = std::fs::File::create(&json_path)?;
            serde_json::to_writer_pretty(&mut file, &summary)
                .map_err(|e| CliError::Data(e.to_string()))?;
            file.write_all(b"\n")?;
        }
        None => {
            std::io::stdout().write_all(&csv_bytes)?;
        }
    }
    Ok(())
}

fn axes_to_report(args: &ReportArgs, data: &crate::commands::LoadedData) -> Vec<(usize, String)> {
    match args.axis {
        Some(axis) => {
            let name = data
                .bank
                .concepts
                .iter()
                .find(|c| c.axis == axis)
                .map(|c| c.name.clone())
                .unwrap_or_default();
            vec![(axis, name)]
        }
        None => data
            .bank
            .concepts
            .iter()
            .map(|c| (c.axis, c.name.clone()))
            .collect(),
    }
}

fn report_topk(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let activations = slot_activations(model, &dataset.inputs, reducer)?;
    let mut rows = Vec::new();
    for (axis, concept) in axes_to_report(args, data) {
        let per_axis: Vec<f64> = activations.iter().map(|v| v[axis]).collect();
        let ranked = topk_activated(&per_axis, args.top_k.min(per_axis.len()))?;
        for (rank, (sample, activation)) in ranked.iter().enumerate() {
            rows.push(vec![
                axis.to_string(),
                concept.clone(),
                (rank + 1).to_string(),
                sample.to_string(),
                activation.to_string(),
            ]);
        }
    }
    Ok(ReportOutput {
        header: ["axis", "concept", "rank", "sample_id", "activation"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: vec![format!("top-{} by eval-mode activation", args.top_k)],
        values: serde_json::Value::Null,
    })
}

fn report_similarity(
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    if data.bank.len() < 2 {
        return Err(CliError::Data("similarity needs at least 2 concepts".into()));
    }
    // Post-activation representation: what the downstream layer consumes.
    let groups: Vec<Vec<Vec<f64>>> = concept_activations(model, data, reducer)?
        .into_iter()
        .map(|g| {
            g.into_iter()
                .map(|v| v.into_iter().map(|x| x.max(0.0)).collect())
                .collect()
        })
        .collect();
    let sim = similarity_matrices(&groups)?;
    let mut rows = Vec::new();
    for i in 0..sim.concepts {
        for j in 0..sim.concepts {
            rows.push(vec![
                data.bank.concepts[i].name.clone(),
                data.bank.concepts[j].name.clone(),
                sim.d_at(i, j).to_string(),
                sim.normalized_at(i, j).to_string(),
            ]);
        }
    }
    let mean_off = sim.mean_off_diagonal();
    Ok(ReportOutput {
        header: ["concept_i", "concept_j", "d", "q_normalized"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: vec!["cosines over post-activation slot output".into()],
        values: serde_json::json!({ "mean_off_diagonal_normalized": mean_off }),
    })
}

fn report_correlation(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let latents = match args.mode.as_str() {
        "train" => {
            let mut scratch = model.clone();
            scratch
                .forward_traced(&dataset.inputs, cw_core::whitening::Mode::Train)?
                .slot_latent
        }
        _ => {
            let activations = slot_activations(model, &dataset.inputs, reducer)?;
            let n = activations.len();
            let d = activations.first().map(|v| v.len()).unwrap_or(0);
            let mut flat = vec![0.0; d * n];
            for (j, v) in activations.iter().enumerate() {
                for i in 0..d {
                    flat[i * n + j] = v[i];
                }
            }
            Tensor::from_vec(&[d, n], flat).map_err(CliError::from)?
        }
    };
    let latents = match latents.shape().len() {
        2 => latents,
        _ => latents.conv_to_matrix().map_err(CliError::from)?,
    };
    let corr = axis_correlation(&latents)?;
    let mut rows = Vec::new();
    for i in 0..corr.dim {
        for j in 0..corr.dim {
            let value = corr.at(i, j);
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                if value.is_nan() {
                    String::new()
                } else {
                    value.to_string()
                },
            ]);
        }
    }
    Ok(ReportOutput {
        header: ["axis_i", "axis_j", "abs_corr"].map(String::from).to_vec(),
        rows,
        notes: corr
            .undefined_axes
            .iter()
            .map(|a| format!("axis {} has zero variance; entries undefined", a))
            .collect(),
        values: serde_json::json!({
            "mean_off_diagonal": corr.mean_off_diagonal(),
            "mode": args.mode,
        }),
    })
}

fn report_auc(
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    if data.bank.len() < 2 {
        return Err(CliError::Data(
            "one-vs-all AUC needs at least 2 concepts".into(),
        ));
    }
    let groups = concept_activations(model, data, reducer)?;
    let mut rows = Vec::new();
    let mut aucs = Vec::new();
    for (j, set) in data.bank.concepts.iter().enumerate() {
        let positives: Vec<f64> = groups[j].iter().map(|v| v[set.axis]).collect();
        let negatives: Vec<f64> = groups
            .iter()
            .enumerate()
            .filter(|(p, _)| *p != j)
            .flat_map(|(_, g)| g.iter().map(|v| v[set.axis]))
            .collect();
        let auc = purity_auc(&positives, &negatives)?;
        aucs.push(auc);
        rows.push(vec![
            set.name.clone(),
            set.axis.to_string(),
            auc.to_string(),
            positives.len().to_string(),
            negatives.len().to_string(),
        ]);
    }
    Ok(ReportOutput {
        header: ["concept", "axis", "auc", "n_pos", "n_neg"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: Vec::new(),
        values: serde_json::json!({ "aucs": aucs }),
    })
}

fn report_importance(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let (loss, loss_name) = match args.loss.as_str() {
        "multiclass" => (LossKind::Multiclass, "multiclass".to_string()),
        "balanced" => (
            LossKind::BalancedBinary {
                target: args.target_class,
            },
            format!("balanced_binary({})", args.target_class),
        ),
        other => return Err(CliError::Config(format!("unknown loss '{}'", other))),
    };
    let options = ImportanceOptions {
        loss,
        repetitions: args.repetitions,
        seed: args.seed,
    };
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (axis, concept) in axes_to_report(args, data) {
        let result = concept_importance(model, &dataset.inputs, &dataset.labels, axis, &options)?;
        means.push(result.mean);
        rows.push(vec![
            axis.to_string(),
            concept,
            loss_name.clone(),
            result.mean.to_string(),
            result.std.to_string(),
            args.repetitions.to_string(),
        ]);
    }
    Ok(ReportOutput {
        header: [
            "axis",
            "concept",
            "loss_kind",
            "ci_mean",
            "ci_std",
            "repetitions",
        ]
        .map(String::from)
        .to_vec(),
        rows,
        notes: Vec::new(),
        values: serde_json::json!({ "ci_means": means }),
    })
}

fn report_hist2d(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let (axis_i, axis_j) = parse_axes(&args.axes)?;
    let activations = slot_activations(model, &dataset.inputs, reducer)?;
    let points: Vec<(f64, f64)> = activations.iter().map(|v| (v[axis_i], v[axis_j])).collect();
    let hist = joint_histogram(&points, args.grid, args.seed)?;
    let mut rows = Vec::new();
    for i in 0..hist.grid {
        for j in 0..hist.grid {
            let rep = hist.representatives[i * hist.grid + j]
                .map(|id| id.to_string())
                .unwrap_or_default();
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                hist.count_at(i, j).to_string(),
                rep,
            ]);
        }
    }
    Ok(ReportOutput {
        header: ["cell_i", "cell_j", "count", "representative_id"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: Vec::new(),
        values: serde_json::json!({
            "grid": hist.grid,
            "bounds_x": hist.bounds_x,
            "bounds_y": hist.bounds_y,
        }),
    })
}

fn report_trajectory(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let (axis_i, axis_j) = parse_axes(&args.axes)?;
    let activations = slot_activations(model, &dataset.inputs, reducer)?;
    let layer = LayerActivations {
        layer: model.cw_index.to_string(),
        entries: activations
            .iter()
            .enumerate()
            .map(|(id, v)| (id, v[axis_i], v[axis_j]))
            .collect(),
    };
    let points = percentile_trajectory(&[layer], args.sample)?;
    let rows = points
        .iter()
        .map(|p| {
            vec![
                p.layer.clone(),
                args.sample.to_string(),
                axis_i.to_string(),
                axis_j.to_string(),
                p.rank_i.to_string(),
                p.rank_j.to_string(),
            ]
        })
        .collect();
    Ok(ReportOutput {
        header: ["layer", "sample_id", "axis_i", "axis_j", "rank_i", "rank_j"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: vec![
            "one layer per checkpoint; combine reports from checkpoints that place CW at \
             different layers for a full trajectory"
                .into(),
        ],
        values: serde_json::Value::Null,
    })
}

fn report_occlusion(
    args: &ReportArgs,
    model: &Model,
    data: &crate::commands::LoadedData,
    reducer: ActivationReducer,
) -> Result<ReportOutput> {
    let dataset = report_dataset(data);
    let image = dataset.sample(args.sample)?;
    let side = match image.shape() {
        [_, _, h, _] => *h,
        s => {
            return Err(CliError::Data(format!(
                "occlusion needs image data, got shape {:?}",
                s
            )))
        }
    };
    let patch = args.patch.unwrap_or((side / 4).max(1));
    let stride = args.stride.unwrap_or(side.div_ceil(12).max(1));
    let axis = args.axis.unwrap_or(0);
    let grid = occlusion_map(model, &image, axis, patch, stride, reducer)?;
    let field = grid.receptive_field(args.quantile);
    let mut rows = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            rows.push(vec![
                r.to_string(),
                c.to_string(),
                (r * stride).to_string(),
                (c * stride).to_string(),
                grid.drop_at(r, c).to_string(),
                field.contains(&(r, c)).to_string(),
            ]);
        }
    }
    Ok(ReportOutput {
        header: ["row", "col", "y", "x", "drop", "in_receptive_field"]
            .map(String::from)
            .to_vec(),
        rows,
        notes: vec![format!("patch {} stride {} axis {}", patch, stride, axis)],
        values: serde_json::json!({
            "baseline": grid.baseline,
            "patch": patch,
            "stride": stride,
            "quantile": args.quantile,
        }),
    })
}
