//! Command-line interface. Every subcommand reads a JSON Lines manifest;
//! outputs are written atomically so a crashed run never leaves a truncated
//! file behind. Errors go to stderr as one JSON object plus a nonzero exit.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::annotate::{
    default_compositions, load_compositions, plan_tools, run_cascade, AnnotationTask, BackendSet,
    HttpBackend, HumanQueue, ToolComposition,
};
use crate::graspgen::{propose_grasp, GripperSpec, DEFAULT_MIN_POINTS};
use crate::instructions::{
    generate_instructions, HttpChatClient, ReasoningMode, StubChatClient,
};
use crate::manifest::{
    load_manifest, manifest_stats, manifest_to_string, sample_subset, validate_manifest,
    write_atomic, DatasetManifest, InstructionKind, ReasoningKind,
};
use crate::maskops::rle_decode;
use crate::metrics::evaluate_benchmark;
use crate::predict::{
    CenterBoxPredictor, EmptyPredictor, MaskPredictor, OraclePredictor, RemotePredictor,
};
use crate::projection::DepthImage;

#[derive(Parser)]
#[command(name = "affordkit", version, about = "Affordance dataset tooling")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    Oracle,
    Empty,
    Centerbox,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Easy,
    Hard,
}

#[derive(Subcommand)]
enum Command {
    /// Check manifest invariants; strict mode also resolves files on disk.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Draw a reproducible record subset.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the annotation tool cascade over unannotated records.
    Annotate {
        #[arg(long)]
        manifest: PathBuf,
        /// Per-dataset tool composition JSON; stock compositions when absent.
        #[arg(long)]
        compositions: Option<PathBuf>,
        /// Which composition to apply.
        #[arg(long, default_value = "EgoObjects")]
        dataset: String,
        #[arg(long)]
        ground_endpoint: Option<String>,
        #[arg(long)]
        segment_endpoint: Option<String>,
        /// Spool file for records routed to manual annotation.
        #[arg(long)]
        human_queue: Option<PathBuf>,
        /// Re-annotate records that already carry provenance.
        #[arg(long)]
        force: bool,
        /// Rewrite the input manifest instead of requiring --out.
        #[arg(long)]
        in_place: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Masks below this pixel area count as tool failures.
        #[arg(long, default_value_t = 25)]
        min_area: u64,
    },
    /// Generate instruction pairs for the manifest's categories.
    Instructions {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Chat-completion endpoint; a deterministic offline stub when absent.
        #[arg(long)]
        llm_endpoint: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictor against ground truth (gIoU / cIoU).
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        predictor: PredictorKind,
        #[arg(long)]
        predictor_endpoint: Option<String>,
        /// Worker threads; defaults to the rayon heuristic.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose grasp poses for records carrying depth and camera data.
    Posegen {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
        min_points: usize,
        /// Finger margin in meters added to each side of the closing extent.
        #[arg(long, default_value_t = 0.005)]
        finger_margin: f64,
        /// Maximum gripper opening in meters.
        #[arg(long, default_value_t = 0.085)]
        max_width: f64,
    },
    /// Per-category / per-domain / per-split record counts.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Serialize)]
struct CliErrorJson<'a> {
    error: &'a str,
}

fn fail(message: &str) -> i32 {
    eprintln!(
        "{}",
        serde_json::to_string(&CliErrorJson { error: message }).expect("error serializes")
    );
    1
}

fn emit(out: Option<&Path>, content: &str) -> std::io::Result<()> {
    match out {
        Some(path) => write_atomic(path, content.as_bytes()),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(message) => fail(&message),
    }
}

fn dispatch(command: Command) -> Result<i32, String> {
    match command {
        Command::Validate { manifest, strict } => {
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let report = validate_manifest(&m, strict);
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(if report.is_clean() { 0 } else { 1 })
        }
        Command::Sample {
            manifest,
            count,
            seed,
            out,
        } => {
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let subset = sample_subset(&m, count, seed).map_err(|e| e.to_string())?;
            emit(out.as_deref(), &manifest_to_string(&subset)).map_err(|e| e.to_string())?;
            Ok(0)
        }
        Command::Stats { manifest } => {
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let stats = manifest_stats(&m);
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
            Ok(0)
        }
        Command::Eval {
            manifest,
            predictor,
            predictor_endpoint,
            jobs,
            out,
        } => {
            if let Some(jobs) = jobs {
                // ignore the error when a pool already exists (e.g. tests)
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build_global();
            }
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let root = PathBuf::from(&m.header.image_root);
            let predictor: Box<dyn MaskPredictor> = match predictor {
                PredictorKind::Oracle => Box::new(OraclePredictor::from_records(&m.records)),
                PredictorKind::Empty => Box::new(EmptyPredictor),
                PredictorKind::Centerbox => Box::new(CenterBoxPredictor::new(root)),
                PredictorKind::Remote => {
                    let endpoint = predictor_endpoint
                        .ok_or("--predictor-endpoint is required with --predictor remote")?;
                    Box::new(RemotePredictor::new(endpoint, root, true))
                }
            };
            let report = evaluate_benchmark(&m, predictor.as_ref()).map_err(|e| e.to_string())?;
            if let Some(path) = &out {
                write_atomic(path, report.to_json().as_bytes()).map_err(|e| e.to_string())?;
            }
            print!("{}", report.to_table());
            Ok(0)
        }
        Command::Posegen {
            manifest,
            out,
            min_points,
            finger_margin,
            max_width,
        } => {
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let root = PathBuf::from(&m.header.image_root);
            let gripper = GripperSpec {
                max_width,
                finger_margin,
            };
            let mut lines = String::new();
            for rec in &m.records {
                let (depth_path, camera) = match (&rec.depth_path, &rec.camera) {
                    (Some(d), Some(c)) => (d, c),
                    _ => continue,
                };
                let run = || -> Result<String, String> {
                    let depth =
                        DepthImage::load_png(root.join(depth_path)).map_err(|e| e.to_string())?;
                    let mask = rle_decode(&rec.mask).map_err(|e| e.to_string())?;
                    let k = camera.intrinsics().map_err(|e| e.to_string())?;
                    let t = camera.extrinsics().map_err(|e| e.to_string())?;
                    let cloud = crate::projection::backproject_masked(None, &mask, &depth, &k, &t)
                        .map_err(|e| e.to_string())?;
                    let pose =
                        propose_grasp(&cloud, &t, &gripper, min_points).map_err(|e| e.to_string())?;
                    #[derive(Serialize)]
                    struct PoseLine {
                        #[serde(rename = "recordId")]
                        record_id: String,
                        #[serde(flatten)]
                        pose: crate::graspgen::PoseJson,
                    }
                    serde_json::to_string(&PoseLine {
                        record_id: rec.id.clone(),
                        pose: pose.to_json(),
                    })
                    .map_err(|e| e.to_string())
                };
                match run() {
                    Ok(line) => {
                        lines.push_str(&line);
                        lines.push('\n');
                    }
                    Err(e) => eprintln!(
                        "{}",
                        serde_json::json!({"recordId": rec.id, "error": e})
                    ),
                }
            }
            emit(out.as_deref(), lines.trim_end_matches('\n')).map_err(|e| e.to_string())?;
            Ok(0)
        }
        Command::Instructions {
            manifest,
            mode,
            llm_endpoint,
            out,
        } => {
            let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let mode = match mode {
                Mode::Easy => ReasoningMode::Easy,
                Mode::Hard => ReasoningMode::Hard,
            };
            let mut categories = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for rec in &m.records {
                if seen.insert(rec.category.clone()) {
                    categories.push((rec.category_label()?, None));
                }
            }
            let stub;
            let http;
            let client: &dyn crate::instructions::ChatClient = match &llm_endpoint {
                Some(endpoint) => {
                    http = HttpChatClient::new(endpoint, "gpt-4");
                    &http
                }
                None => {
                    stub = StubChatClient { mode };
                    &stub
                }
            };
            let (pairs, stats) = generate_instructions(&categories, mode, client);
            let mut lines = String::new();
            for pair in &pairs {
                let (instruction_kind, reasoning_kind) = match pair.mode {
                    ReasoningMode::Easy => (InstructionKind::Easy, ReasoningKind::Easy),
                    ReasoningMode::Hard => (InstructionKind::Hard, ReasoningKind::Hard),
                };
                // a manifest-record fragment: merge over the source record to
                // mint a reasoning-instruction variant
                let fragment = serde_json::json!({
                    "category": pair.category,
                    "instructionKind": instruction_kind,
                    "reasoningKind": reasoning_kind,
                    "instruction": pair.second,
                    "context": pair.first,
                });
                lines.push_str(&fragment.to_string());
                lines.push('\n');
            }
            emit(out.as_deref(), lines.trim_end_matches('\n')).map_err(|e| e.to_string())?;
            eprintln!(
                "{}",
                serde_json::to_string(&stats).expect("stats serialize")
            );
            Ok(0)
        }
        Command::Annotate {
            manifest,
            compositions,
            dataset,
            ground_endpoint,
            segment_endpoint,
            human_queue,
            force,
            in_place,
            out,
            min_area,
        } => {
            let out = match (out, in_place) {
                (Some(path), false) => path,
                (None, true) => manifest.clone(),
                (None, false) => return Err("pass --out <path> or --in-place".into()),
                (Some(_), true) => return Err("--out and --in-place are exclusive".into()),
            };
            let mut m = load_manifest(&manifest).map_err(|e| e.to_string())?;
            let comps = match &compositions {
                Some(path) => load_compositions(path).map_err(|e| e.to_string())?,
                None => default_compositions(),
            };
            let comp: &ToolComposition = comps
                .iter()
                .find(|c| c.dataset_name == dataset)
                .ok_or_else(|| format!("no composition named {dataset:?}"))?;
            let queue = match &human_queue {
                Some(path) => Some(HumanQueue::open(path).map_err(|e| e.to_string())?),
                None => None,
            };
            let grounder = ground_endpoint.as_deref().map(HttpBackend::new);
            let segmenter = segment_endpoint.as_deref().map(HttpBackend::new);
            let backends = BackendSet {
                segmenter: segmenter.as_ref().map(|b| b as _),
                grounder: grounder.as_ref().map(|b| b as _),
                part_grounder: grounder.as_ref().map(|b| b as _),
                human_queue: queue.as_ref(),
                min_mask_area: min_area,
                ..Default::default()
            };
            let mut annotated = 0usize;
            let mut pending = 0usize;
            let mut skipped = 0usize;
            for rec in &mut m.records {
                if rec.provenance.is_some() && !force {
                    skipped += 1;
                    continue;
                }
                let task = AnnotationTask {
                    record_id: rec.id.clone(),
                    image_path: rec.image_path.clone(),
                    category: rec.category.clone(),
                    image_width: rec.mask.width(),
                    image_height: rec.mask.height(),
                    original_mask: (rec.mask.area() > 0).then(|| rec.mask.clone()),
                    gt_box: None,
                    instruction: Some(rec.instruction.clone()),
                };
                let plan = plan_tools(&task, comp, &backends.part_vocabulary);
                let result = run_cascade(&task, &plan, &backends).map_err(|e| e.to_string())?;
                if let (Some(mask), Some(provenance)) = (result.final_mask, result.provenance) {
                    rec.mask = mask;
                    rec.provenance = Some(provenance);
                    annotated += 1;
                } else {
                    pending += 1;
                }
            }
            write_atomic(&out, manifest_to_string(&m).as_bytes()).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::json!({
                    "annotated": annotated,
                    "pending": pending,
                    "skipped": skipped
                })
            );
            Ok(0)
        }
    }
}

pub fn manifest_from(path: &Path) -> Result<DatasetManifest, String> {
    load_manifest(path).map_err(|e| e.to_string())
}
