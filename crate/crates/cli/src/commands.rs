use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use layerbuild::layers::{compose, compose_frame, filter_layer, load_layers, save_layers, Kernel};
use layerbuild::palette::{parse_palette, PaletteDoc};
use layerbuild::pipeline::{decompose as run_pipeline, DecomposeConfig, DecomposeReport, StageTime, DEFAULT_LAYERS};
use layerbuild::pixel::{load_volume, save_volume, PixelVolume, Rgb32};
use layerbuild::solver::StrokeDoc;
use layerbuild::superpixel::boundary_overlay;
use layerbuild::Error;

use crate::args::{DecomposeArgs, FilterArgs, InspectArgs, KernelKind, RecolorArgs};
use crate::{layer_meta, plane_png, UsageError};

fn require_file(path: &Path, flag: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("--{flag} {}: no such file or directory", path.display())).into());
    }
    Ok(())
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Builds the pipeline configuration from flags; the palette and strokes are
/// read from disk here so that bad files fail before any heavy work.
pub fn decompose_config(args: &DecomposeArgs, volume: &PixelVolume) -> Result<DecomposeConfig> {
    let palette = match &args.palette {
        Some(path) => {
            require_file(path, "palette")?;
            Some(parse_palette(path)?)
        }
        None => None,
    };
    let strokes = match &args.constraints {
        Some(path) => {
            require_file(path, "constraints")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(StrokeDoc::from_json(&text)?)
        }
        None => None,
    };
    let mut config = DecomposeConfig::for_volume(volume);
    if let Some(s) = args.superpixels {
        config.superpixels = s;
    }
    config.layers = args
        .num_layers
        .or(palette.as_ref().map(|p| p.len()))
        .unwrap_or(DEFAULT_LAYERS);
    config.seed = args.seed;
    config.params = args.solver.params();
    config.palette = palette;
    config.strokes = strokes;
    config.auto_constraints = !args.no_auto_constraints;
    config.tau = args.tau;
    config.validate()?;
    Ok(config)
}

/// Runs the pipeline and writes its outputs. The returned report includes
/// loading and saving so its stages account for the whole run.
pub fn decompose(args: &DecomposeArgs) -> Result<DecomposeReport> {
    let start = Instant::now();
    require_file(&args.input, "input")?;
    if args.num_layers == Some(0) {
        return Err(Error::InvalidParameter("num-layers must be ≥ 1".into()).into());
    }
    let volume = load_volume(&args.input, args.kind.resolve(&args.input))?;
    let config = decompose_config(args, &volume)?;
    let load_ms = ms_since(start);

    let result = run_pipeline(&volume, &config)?;

    let save_start = Instant::now();
    save_layers(&result.layers, &args.out)?;
    if let Some(path) = &args.reconstruction {
        save_volume(&result.reconstruction, path)?;
    }
    if let Some(path) = &args.boundaries {
        save_volume(&boundary_overlay(&result.segmentation, &volume)?, path)?;
    }
    let mut report = result.report;
    report.timings_ms.insert(
        0,
        StageTime {
            stage: "load".into(),
            ms: load_ms,
        },
    );
    report.push_stage("save", ms_since(save_start));
    report.total_ms = ms_since(start);
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}

/// Reads a palette document without the distinctness check; recoloring may
/// map two layers to the same color.
pub fn read_colors(path: &Path) -> Result<Vec<Rgb32>> {
    require_file(path, "palette")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: PaletteDoc = serde_json::from_str(&text).map_err(Error::Json)?;
    Ok(doc
        .colors
        .iter()
        .map(|c| [c[0] as f32, c[1] as f32, c[2] as f32])
        .collect())
}

/// Composes every frame with the new colors and returns per-frame compose
/// times in milliseconds.
pub fn recolor(args: &RecolorArgs) -> Result<Vec<f64>> {
    require_file(&args.layers, "layers")?;
    let set = load_layers(&args.layers)?;
    let colors = read_colors(&args.palette)?;
    if colors.len() != set.num_layers() {
        return Err(Error::DimensionMismatch(format!(
            "palette has {} colors but the layers file has {} layers",
            colors.len(),
            set.num_layers()
        ))
        .into());
    }
    let mut frames = Vec::with_capacity(set.frames());
    let mut times = Vec::with_capacity(set.frames());
    for t in 0..set.frames() {
        let start = Instant::now();
        frames.push(compose_frame(&set, &colors, t)?);
        times.push(ms_since(start));
    }
    save_volume(&PixelVolume::stack(&frames)?, &args.out)?;
    Ok(times)
}

fn kernel(args: &FilterArgs) -> Result<Kernel> {
    Ok(match args.kernel {
        KernelKind::Gaussian => Kernel::Gaussian {
            sigma: args
                .sigma
                .ok_or_else(|| UsageError("--sigma is required for the gaussian kernel".into()))?,
        },
        KernelKind::Emboss => Kernel::Emboss,
        KernelKind::MotionBlur => Kernel::MotionBlur {
            length: args
                .length
                .ok_or_else(|| UsageError("--length is required for the motion-blur kernel".into()))?,
            angle: args.angle,
        },
    })
}

pub fn filtered_path(input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    input.with_file_name(format!("{stem}.filtered.lbld"))
}

/// Returns the path written.
pub fn filter(args: &FilterArgs) -> Result<PathBuf> {
    require_file(&args.layers, "layers")?;
    let kernel = kernel(args)?;
    let set = load_layers(&args.layers)?;
    let out = filter_layer(&set, args.layer, kernel)?;
    let path = args.out.clone().unwrap_or_else(|| filtered_path(&args.layers));
    save_layers(&out, &path)?;
    if let Some(render) = &args.render {
        save_volume(&compose(&out, out.palette())?, render)?;
    }
    Ok(path)
}

pub fn inspect(args: &InspectArgs) -> Result<serde_json::Value> {
    require_file(&args.layers, "layers")?;
    let set = load_layers(&args.layers)?;
    if let Some(dir) = &args.planes {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for j in 0..set.num_layers() {
            for t in 0..set.frames() {
                let name = if set.frames() == 1 {
                    format!("plane_{j}.png")
                } else {
                    format!("plane_{j}_frame_{t:03}.png")
                };
                let path = dir.join(name);
                std::fs::write(&path, plane_png(&set, j, t, false)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    let mut value = serde_json::to_value(layer_meta(&set))?;
    value["file_bytes"] = std::fs::metadata(&args.layers)?.len().into();
    Ok(value)
}
