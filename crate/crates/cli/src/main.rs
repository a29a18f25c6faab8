//! `wirecheck`: train profiles, inspect frames, generate synthetic corpora and
//! run the inspection service.
//!
//! Exit codes: 0 pass or success, 1 fail, 2 unclear, 3 usage or config error,
//! 4 I/O or profile error.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use wirecheck_core::imaging::crop_roi;
use wirecheck_core::orientation::GridDescriptor;
use wirecheck_core::pipeline::{load_profile, save_profile, InspectionResult};
use wirecheck_core::segmentation::segment_wires;
use wirecheck_core::synth::{expected_verdict, generate, permute_defect, Defect, HarnessSpec};
use wirecheck_core::{inspect, train, Error, Overall, RgbImage, Segmentation, TrainingConfig, TrainingSample};

const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_UNCLEAR: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "wirecheck", version, about = "Wire harness colour-sequence and orientation inspection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a profile from known-good samples (one directory of PNGs per view).
    Train {
        /// One directory per view, in view order; files are paired by basename.
        #[arg(long, num_args = 1.., required = true)]
        samples: Vec<PathBuf>,
        /// Training config JSON (profile id, harness type, views).
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect one harness: one PNG per view, in the profile's view order.
    Inspect {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        /// Also write the JSON result to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the JSON result instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Render synthetic frames and a CSV manifest.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        /// none | swap:i,j | reverse | shift:i,dx | drop:i
        #[arg(long, default_value = "none")]
        defect: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP inspection service until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        profiles_dir: PathBuf,
        #[arg(long)]
        auth_token_file: PathBuf,
        #[arg(long)]
        sessions_db: PathBuf,
    },
}

/// A failed command: message plus exit code.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::SpecInvalid(_) | Error::ViewCountMismatch { .. } => EXIT_USAGE,
            _ => EXIT_IO,
        };
        Failure(code, e.to_string())
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_IO, format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train { samples, views, out } => cmd_train(&samples, &views, &out),
        Command::Inspect { profile, frames, report, json } => cmd_inspect(&profile, &frames, report.as_deref(), json),
        Command::Gen { spec, defect, count, seed, out } => cmd_gen(&spec, &defect, count, seed, &out),
        Command::Serve { port, profiles_dir, auth_token_file, sessions_db } => {
            cmd_serve(port, profiles_dir, &auth_token_file, sessions_db)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = fs::read(path).map_err(|e| io_fail(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn png_names(dir: &Path) -> Result<Vec<String>, Failure> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_fail(dir, e))? {
        let name = entry.map_err(|e| io_fail(dir, e))?.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_train(dirs: &[PathBuf], views: &Path, out: &Path) -> Result<u8, Failure> {
    let config: TrainingConfig = read_json(views)?;
    config.validate()?;
    if dirs.len() != config.views.len() {
        return Err(Failure(
            EXIT_USAGE,
            format!("{} sample directories for {} views", dirs.len(), config.views.len()),
        ));
    }
    let names = png_names(&dirs[0])?;
    for d in &dirs[1..] {
        if png_names(d)? != names {
            return Err(Failure(EXIT_USAGE, format!("{} does not hold the same file names as {}", d.display(), dirs[0].display())));
        }
    }
    let mut samples = Vec::with_capacity(names.len());
    for name in &names {
        let frames = dirs
            .iter()
            .map(|d| RgbImage::load_png(d.join(name)))
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(TrainingSample { name: name.clone(), frames });
    }
    for s in &samples {
        let mut line = format!("{}:", s.name);
        for (view, frame) in config.views.iter().zip(&s.frames) {
            let summary = match crop_roi(frame, view.roi) {
                Ok(c) => match segment_wires(&c, &view.bg_range, &view.scan_config(), view.expected_wires, &view.gradient) {
                    Segmentation::Clear { boxes, path } => format!("{} wires ({path:?} path)", boxes.len()),
                    Segmentation::Unclear { reason } => format!("unclear ({reason})"),
                },
                Err(e) => e.to_string(),
            };
            line.push_str(&format!(" [{}] {summary}", view.view_id));
        }
        println!("{line}");
    }
    let profile = train(&config, &samples, &GridDescriptor::default())?;
    save_profile(&profile, out)?;
    println!(
        "profile {}/{} trained from {} samples -> {}",
        profile.harness_type,
        profile.profile_id,
        profile.sample_count,
        out.display()
    );
    Ok(EXIT_PASS)
}

fn exit_for(overall: Overall) -> u8 {
    match overall {
        Overall::Pass => EXIT_PASS,
        Overall::Fail => EXIT_FAIL,
        Overall::Unclear => EXIT_UNCLEAR,
    }
}

fn cmd_inspect(profile: &Path, frames: &[PathBuf], report: Option<&Path>, json: bool) -> Result<u8, Failure> {
    let profile = load_profile(profile).map_err(|e| Failure(EXIT_IO, format!("{}: {e}", profile.display())))?;
    if frames.len() != profile.view_count() {
        return Err(Failure(
            EXIT_USAGE,
            format!("profile has {} views but {} frames were given", profile.view_count(), frames.len()),
        ));
    }
    let images = frames.iter().map(RgbImage::load_png).collect::<Result<Vec<_>, _>>()?;
    let result = inspect(&profile, &images, &GridDescriptor::default())?;
    let body = serde_json::to_string_pretty(&result).map_err(|e| Failure(EXIT_IO, e.to_string()))?;
    if let Some(path) = report {
        fs::write(path, &body).map_err(|e| io_fail(path, e))?;
    }
    if json {
        println!("{body}");
    } else {
        print!("{}", render_table(&result));
    }
    Ok(exit_for(result.overall))
}

fn render_table(r: &InspectionResult) -> String {
    let mut s = format!("profile {}  overall {}\n", r.profile_id, r.overall.as_str().to_uppercase());
    for v in &r.views {
        let seg = match &v.segmentation {
            Segmentation::Clear { path, .. } => format!("clear ({path:?} path)"),
            Segmentation::Unclear { reason } => format!("unclear: {reason}"),
        };
        let orient = v.orientation.map(|o| format!("{o:?}")).unwrap_or_else(|| "not checked".into());
        s.push_str(&format!("view {}  {}  segmentation {seg}  orientation {orient}\n", v.view_id, v.overall));
        s.push_str("  wire  verdict    mse_rgb     mse_hsv   box\n");
        for w in &v.wires {
            let (rgb, hsv) = w.score.map(|c| (format!("{:.2}", c.mse_rgb), format!("{:.5}", c.mse_hsv))).unwrap_or(("-".into(), "-".into()));
            let bx = w
                .bbox
                .map(|b| format!("x {}..{} y {}..={}", b.x_left, b.x_right, b.y_top, b.y_bottom))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!("  {:<4}  {:<9}  {rgb:>9}  {hsv:>9}   {bx}\n", w.wire_index, format!("{:?}", w.verdict)));
        }
    }
    let mismatched: BTreeMap<&str, Vec<usize>> = r
        .views
        .iter()
        .map(|v| {
            let idx = v
                .wires
                .iter()
                .filter(|w| w.verdict == wirecheck_core::WireVerdict::Mismatch)
                .map(|w| w.wire_index)
                .collect::<Vec<_>>();
            (v.view_id.as_str(), idx)
        })
        .filter(|(_, idx)| !idx.is_empty())
        .collect();
    for (view, idx) in &mismatched {
        s.push_str(&format!("mismatched wires in {view}: {idx:?}\n"));
    }
    if let Some(m) = &r.message {
        s.push_str(m);
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct ManifestRow {
    image: String,
    spec: String,
    seed: u64,
    expected: &'static str,
}

fn cmd_gen(spec_path: &Path, defect: &str, count: usize, seed: u64, out: &Path) -> Result<u8, Failure> {
    let spec: HarnessSpec = read_json(spec_path)?;
    spec.validate()?;
    let defect: Option<Defect> = match defect {
        "none" => None,
        d => Some(d.parse().map_err(|e: Error| Failure(EXIT_USAGE, e.to_string()))?),
    };
    let defective = match defect {
        Some(d) => permute_defect(&spec, d).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?,
        None => spec.clone(),
    };
    let expected = expected_verdict(&spec, defect).as_str();
    fs::create_dir_all(out).map_err(|e| io_fail(out, e))?;
    let manifest_path = out.join("manifest.csv");
    let mut manifest = csv::Writer::from_path(&manifest_path).map_err(|e| io_fail(&manifest_path, e))?;
    let width = count.saturating_sub(1).to_string().len().max(5);
    for k in 0..count {
        let s = seed.wrapping_add(k as u64);
        let (img, _) = generate(&defective.clone().with_seed(s))?;
        let name = format!("img_{k:0width$}.png");
        img.save_png(out.join(&name))?;
        manifest
            .serialize(ManifestRow { image: name, spec: spec_path.display().to_string(), seed: s, expected })
            .map_err(|e| io_fail(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| io_fail(&manifest_path, e))?;
    println!("wrote {count} images and {}", manifest_path.display());
    Ok(EXIT_PASS)
}

fn cmd_serve(port: u16, profiles_dir: PathBuf, token_file: &Path, sessions_db: PathBuf) -> Result<u8, Failure> {
    let token = fs::read_to_string(token_file).map_err(|e| io_fail(token_file, e))?.trim().to_string();
    if token.is_empty() {
        return Err(Failure(EXIT_USAGE, format!("{} holds an empty token", token_file.display())));
    }
    let config = wirecheck_service::ServiceConfig { profiles_dir, sessions_db, token };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure(EXIT_IO, e.to_string()))?;
    rt.block_on(wirecheck_service::serve(config, SocketAddr::from(([127, 0, 0, 1], port))))
        .map_err(|e| Failure(EXIT_IO, format!("serve on port {port}: {e}")))?;
    Ok(EXIT_PASS)
}
