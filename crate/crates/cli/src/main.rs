use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sss_core::dataset::hull::{VisualHull, DEFAULT_RESOLUTION};
use sss_core::dataset::synth::{generate, perturbed_start, SynthConfig};
use sss_core::dataset::{evaluate_split, mean_scores, Dataset, LightStage, Split};
use sss_core::imageio::{write_float, write_image};
use sss_core::model::Model;
use sss_core::relight::{build_reflectance_field, ibl_compose, load_envmap, sample_envmap, tone_map};
use sss_core::render::{RenderMode, RenderSettings};
use sss_core::service::{encode_plane, Encoding, OrbitCamera, OrbitLight, RenderRequest, Renderer, DEFAULT_MAX_RESOLUTION};
use sss_core::shading::MaterialEdit;
use sss_core::training::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "sss", version, about = "Gaussian splatting for translucent objects under one-light-at-a-time capture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ViewArgs {
    /// Camera as `azimuth,elevation[,distance]` in degrees around the scene centre.
    #[arg(long, default_value = "30,20,2")]
    view: String,
    /// Light as `azimuth,elevation[,distance]`.
    #[arg(long, default_value = "60,45,3")]
    light: String,
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    /// Material edit `key=value`, repeatable.
    #[arg(long = "edit")]
    edits: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic ground-truth blob under the light stage.
    GenerateData {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        gaussians: usize,
        #[arg(long, default_value_t = 80)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        train_frames: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Fit a model to the training split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Flat TOML file; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Compress the configured schedule to this many steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Start from this checkpoint instead of the visual hull.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Jitter the starting checkpoint and reset its materials with this seed.
        #[arg(long)]
        perturb: Option<u64>,
        #[arg(long, default_value_t = 2000)]
        init_gaussians: usize,
        /// Metrics log, one JSON object per line.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// PSNR and SSIM per frame of one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        json: bool,
    },
    /// Render one image or decomposition plane.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value = "final")]
        mode: String,
        /// `.exr` keeps linear values; anything else is 8-bit.
        #[arg(long)]
        out: PathBuf,
    },
    /// Environment relighting through the light-stage reflectance field.
    Relight {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        envmap: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value_t = 1.0)]
        exposure: f64,
        #[arg(long, default_value_t = 3.0)]
        stage_radius: f64,
        #[arg(long, default_value_t = 7)]
        rings: usize,
        #[arg(long, default_value_t = 16)]
        per_ring: usize,
        /// Also store the reflectance field (half precision).
        #[arg(long)]
        field_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every decomposition plane of one view into a directory.
    ExportGbuffer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve renders over HTTP for the interactive viewer.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = DEFAULT_MAX_RESOLUTION)]
        max_resolution: usize,
        /// Take stage lights from this manifest instead of the standard stage.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        stage_radius: f64,
    },
}

fn triple(s: &str, default_distance: f64) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("'{s}' is not a comma-separated list of numbers"))?;
    match v.as_slice() {
        [a, e] => Ok([*a, *e, default_distance]),
        [a, e, d] => Ok([*a, *e, *d]),
        _ => bail!("expected azimuth,elevation[,distance], got '{s}'"),
    }
}

fn request(v: &ViewArgs, mode: RenderMode) -> Result<RenderRequest> {
    let [az, el, dist] = triple(&v.view, 2.0)?;
    let [laz, lel, ldist] = triple(&v.light, 3.0)?;
    let mut edit = MaterialEdit::default();
    for e in &v.edits {
        edit.set_pair(e)?;
    }
    Ok(RenderRequest {
        camera: OrbitCamera {
            azimuth: az,
            elevation: el,
            distance: dist,
            fov: v.fov,
        },
        light: OrbitLight {
            azimuth: laz,
            elevation: lel,
            distance: ldist,
            intensity: v.intensity,
        },
        edit,
        resolution: [v.resolution, v.resolution],
        mode,
        id: None,
    })
}

fn field_errors(errs: Vec<sss_core::service::FieldError>) -> anyhow::Error {
    let lines: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
    anyhow::anyhow!("invalid request: {}", lines.join("; "))
}

fn renderer(checkpoint: &Path, stage: LightStage) -> Result<Renderer> {
    let model = Model::load(checkpoint)?;
    Ok(Renderer::new(model, stage, usize::MAX))
}

fn is_float(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("exr" | "hdr"))
}

fn write_plane(renderer: &Renderer, req: &RenderRequest, out: &Path) -> Result<()> {
    let img = renderer.render(req).map_err(field_errors)?;
    if is_float(out) {
        write_float(out, &img)?;
    } else {
        let bytes = encode_plane(&img, req.mode, Encoding::Png)?;
        std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn parse_mode(s: &str) -> Result<RenderMode> {
    RenderMode::parse(s).with_context(|| {
        let names: Vec<_> = RenderMode::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mode '{s}', expected one of {}", names.join(", "))
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            seed,
            out,
            gaussians,
            frames,
            train_frames,
            resolution,
        } => {
            let cfg = SynthConfig {
                seed,
                gaussians,
                frames,
                train_frames,
                resolution,
                ..Default::default()
            };
            let gt = generate(&cfg, &out)?;
            println!(
                "wrote {} frames of {} Gaussians to {}",
                gt.frames.len(),
                gt.model.scene.len(),
                out.display()
            );
        }
        Command::Train {
            manifest,
            config,
            out,
            steps,
            init,
            perturb,
            init_gaussians,
            log,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = steps {
                cfg = cfg.scaled_to(s);
            }
            let data = Dataset::load(&manifest)?;
            let views = data.views(Split::Train);
            let mut model = match &init {
                Some(p) => Model::load(p)?,
                None => VisualHull::carve(&data.split(Split::Train).collect::<Vec<_>>(), DEFAULT_RESOLUTION)?.initial_model(init_gaussians, cfg.seed)?,
            };
            if let Some(seed) = perturb {
                model = perturbed_start(&model, seed);
            }
            let settings = RenderSettings::default();
            let mut trainer = Trainer::new(model, &views, cfg, settings)?;
            if let Some(p) = &log {
                let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                trainer = trainer.with_log_sink(Box::new(BufWriter::new(f)));
            }
            let outcome = trainer.run()?;
            outcome.model.save(&out)?;
            println!("saved {} Gaussians to {}", outcome.model.scene.len(), out.display());
            let scores = evaluate_split(&outcome.model, &data, Split::Test, &settings)?;
            if !scores.is_empty() {
                let (p, s) = mean_scores(&scores);
                println!("test: psnr {p:.2} dB, ssim {s:.4} over {} frames", scores.len());
            }
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            json,
        } => {
            let split = Split::parse(&split).with_context(|| format!("unknown split '{split}'"))?;
            let model = Model::load(&checkpoint)?;
            let data = Dataset::load(&manifest)?;
            let scores = evaluate_split(&model, &data, split, &RenderSettings::default())?;
            if scores.is_empty() {
                bail!("split has no frames");
            }
            let (p, s) = mean_scores(&scores);
            if json {
                let doc = serde_json::json!({ "frames": scores, "mean": { "psnr": p, "ssim": s } });
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                println!("{:<24} {:>8} {:>8}", "frame", "psnr", "ssim");
                for f in &scores {
                    println!("{:<24} {:>8.2} {:>8.4}", f.frame, f.psnr, f.ssim);
                }
                println!("{:<24} {:>8.2} {:>8.4}", "mean", p, s);
            }
        }
        Command::Render {
            checkpoint,
            view,
            mode,
            out,
        } => {
            let r = renderer(&checkpoint, LightStage::standard(3.0)?)?;
            write_plane(&r, &request(&view, parse_mode(&mode)?)?, &out)?;
        }
        Command::Relight {
            checkpoint,
            envmap,
            view,
            exposure,
            stage_radius,
            rings,
            per_ring,
            field_out,
            out,
        } => {
            let stage = LightStage::generate(stage_radius, rings, per_ring)?;
            let r = renderer(&checkpoint, stage.clone())?;
            let req = request(&view, RenderMode::Final)?;
            let cam = r.camera(&req)?;
            let env = load_envmap(&envmap)?;
            let weights = sample_envmap(&env, &stage)?.weights;
            let field = build_reflectance_field(&r.model, &cam, &stage, &req.edit, &r.settings)?;
            if let Some(p) = field_out {
                field.save(&p)?;
            }
            let img = ibl_compose(&field, &weights)?;
            if is_float(&out) {
                write_float(&out, &img)?;
            } else {
                tone_map(&img, exposure)?
                    .save(&out)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::ExportGbuffer { checkpoint, view, out } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let r = renderer(&checkpoint, LightStage::standard(3.0)?)?;
            for mode in RenderMode::ALL {
                let req = request(&view, mode)?;
                write_plane(&r, &req, &out.join(format!("{}.png", mode.name())))?;
                let img = r.render(&req).map_err(field_errors)?;
                write_image(&out.join(format!("{}.exr", mode.name())), &img)?;
            }
        }
        Command::Serve {
            checkpoint,
            port,
            host,
            max_resolution,
            manifest,
            stage_radius,
        } => {
            let stage = match manifest {
                Some(m) => sss_core::dataset::Manifest::read(&m)?.stage(),
                None => LightStage::standard(stage_radius)?,
            };
            let model = Model::load(&checkpoint)?;
            let renderer = Arc::new(Renderer::new(model, stage, max_resolution));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(sss_cli::serve(renderer, &format!("{host}:{port}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
