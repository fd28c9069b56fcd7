//! `spherecloud` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 every query failed
//! to localize.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use spherecloud_core::attack::{run_attack, AttackConfig, AttackTarget, Bandwidth, DEFAULT_K};
use spherecloud_core::construction::{
    build_sphere_cloud, build_uniform_line_cloud, ConstructionParams, PointCloud, ProvenanceSidecar, DEFAULT_ETA,
    DEFAULT_SIGMA2,
};
use spherecloud_core::geometry::Vec3;
use spherecloud_core::io::{self, Cloud};
use spherecloud_core::localize::{localize, LocalizeConfig};
use spherecloud_core::matching::DEFAULT_RATIO;
use spherecloud_core::metrics::{median, LocalizationRecord, LocalizationReport, PoseRecord, Thresholds};
use spherecloud_core::pose::RansacConfig;
use spherecloud_core::scenegen::{self, apply_noise, generate_scene, NoiseSpec, SceneLayout, SceneSpec};

#[derive(Parser)]
#[command(name = "spherecloud", version, about = "Sphere-cloud maps: build, localize against, attack, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    /// Points uniform in the box.
    Box,
    /// Clustered objects on the walls, floor and ceiling.
    Room,
}

#[derive(Subcommand)]
enum Command {
    /// Build a sphere cloud from a point cloud (PNTC1 or COLMAP points3D.txt).
    Construct {
        #[arg(long)]
        input: PathBuf,
        /// DESC1 descriptor file for COLMAP input.
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ETA)]
        eta: f64,
        #[arg(long, default_value_t = DEFAULT_SIGMA2)]
        sigma2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sphere centre `x,y,z`; defaults to the centroid.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        centre: Option<Vec3>,
        #[arg(long)]
        output: PathBuf,
        /// Ground-truth provenance (keep private).
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Build a uniform line cloud baseline.
    Ulc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Localize every query of a QRY1 file against a sphere cloud.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// TOML file with RANSAC settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        tau_epipolar_px: Option<f64>,
        #[arg(long)]
        tau_depth: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_RATIO)]
        ratio: f32,
        #[arg(long)]
        report: PathBuf,
        /// Record per-query runtimes in the report (makes it run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Run the point-recovery attack on a sphere or line cloud.
    Attack {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        gt_sidecar: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Box-kernel width in scene units; defaults to 5% of the scene size.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Write a synthetic scene: `points.pntc` and `queries.qry`.
    Synth {
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        cameras: usize,
        #[arg(long, default_value_t = 4.0)]
        extent: f64,
        #[arg(long, default_value_t = 32)]
        descriptor_dim: usize,
        #[arg(long, value_enum, default_value_t = Layout::Box)]
        layout: Layout,
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        pixel_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        outlier_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute metrics from a localization report.
    Eval {
        #[arg(long)]
        report: PathBuf,
        /// `rotation_deg,translation_cm`.
        #[arg(long, value_parser = parse_thresholds, default_value = "3,3")]
        thresholds: Thresholds,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; N] = v.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(arr)
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    parse_floats::<3>(s).map(Vec3::from)
}

fn parse_thresholds(s: &str) -> Result<Thresholds, String> {
    let [r, t] = parse_floats::<2>(s)?;
    if r <= 0.0 || t <= 0.0 {
        return Err("thresholds must be positive".into());
    }
    Ok(Thresholds {
        rotation_deg: r,
        translation_cm: t,
    })
}

/// Reads a PNTC1 file, or a COLMAP `points3D.txt` when the magic does not match.
fn load_point_cloud(path: &Path, descriptors: Option<&Path>, seed: u64) -> Result<PointCloud> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"PNTC") {
        if descriptors.is_some() {
            bail!("--descriptors only applies to COLMAP text input");
        }
        return match io::decode_cloud(&bytes).with_context(|| format!("parsing {}", path.display()))? {
            Cloud::Points(pc) => Ok(pc),
            other => bail!("{} holds a {}, expected a point cloud", path.display(), other.kind()),
        };
    }
    let imp = io::ingest_colmap_points(path, descriptors, seed)
        .with_context(|| format!("parsing {} as COLMAP points3D.txt", path.display()))?;
    if imp.placeholder_descriptors {
        eprintln!(
            "note: no descriptors supplied; using {} random placeholder descriptors",
            imp.cloud.len()
        );
    }
    Ok(imp.cloud)
}

fn write_sidecar(path: Option<&Path>, sidecar: &ProvenanceSidecar) -> Result<()> {
    if let Some(p) = path {
        io::save_sidecar(p, sidecar).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn ransac_config(
    config: Option<&Path>,
    overrides: (Option<f64>, Option<f64>, Option<f64>, Option<usize>, Option<f64>, Option<u64>),
) -> Result<RansacConfig> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RansacConfig::default(),
    };
    let (lambda, tau_e, tau_d, max_iter, confidence, seed) = overrides;
    if let Some(v) = lambda {
        cfg.lambda = v;
    }
    if let Some(v) = tau_e {
        cfg.tau_epipolar_px = v;
    }
    if let Some(v) = tau_d {
        cfg.tau_depth = v;
    }
    if let Some(v) = max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = confidence {
        cfg.confidence = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

enum Outcome {
    Done,
    AllFailed,
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Construct {
            input,
            descriptors,
            eta,
            sigma2,
            seed,
            centre,
            output,
            sidecar,
        } => {
            let pc = load_point_cloud(&input, descriptors.as_deref(), seed)?;
            let (sc, side) = build_sphere_cloud(
                &pc,
                &ConstructionParams {
                    eta,
                    sigma2,
                    seed,
                    centre,
                },
            )?;
            io::save_cloud(&output, &Cloud::Sphere(sc.clone())).with_context(|| format!("writing {}", output.display()))?;
            write_sidecar(sidecar.as_deref(), &side)?;
            println!("sphere cloud: {} points ({} fake) -> {}", sc.len(), side.fake_count(), output.display());
        }
        Command::Ulc {
            input,
            descriptors,
            seed,
            output,
            sidecar,
        } => {
            let pc = load_point_cloud(&input, descriptors.as_deref(), seed)?;
            let lc = build_uniform_line_cloud(&pc, seed)?;
            io::save_cloud(&output, &Cloud::Lines(lc)).with_context(|| format!("writing {}", output.display()))?;
            write_sidecar(sidecar.as_deref(), &ProvenanceSidecar::all_true(&pc))?;
            println!("line cloud: {} lines -> {}", pc.len(), output.display());
        }
        Command::Localize {
            map,
            queries,
            config,
            lambda,
            tau_epipolar_px,
            tau_depth,
            max_iter,
            confidence,
            seed,
            ratio,
            report,
            timing,
        } => {
            let ransac = ransac_config(
                config.as_deref(),
                (lambda, tau_epipolar_px, tau_depth, max_iter, confidence, seed),
            )?;
            let sc = match io::load_cloud(&map).with_context(|| format!("reading {}", map.display()))? {
                Cloud::Sphere(sc) => sc,
                other => bail!("{} holds a {}, expected a sphere cloud", map.display(), other.kind()),
            };
            let qs = io::load_queries(&queries).with_context(|| format!("reading {}", queries.display()))?;
            let records: Vec<LocalizationRecord> = qs
                .par_iter()
                .enumerate()
                .map(|(index, q)| {
                    let cfg = LocalizeConfig {
                        ransac: RansacConfig {
                            seed: ransac.seed.wrapping_add(index as u64),
                            ..ransac
                        },
                        ratio,
                    };
                    let start = Instant::now();
                    let res = localize(q, &sc, &cfg);
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    let gt_pose = q.gt_pose.and_then(|p| PoseRecord::from_pose(&p).ok());
                    let runtime_ms = timing.then_some(ms);
                    match res {
                        Ok(l) => LocalizationRecord {
                            index,
                            pose: PoseRecord::from_pose(&l.pose).ok(),
                            gt_pose,
                            error: None,
                            num_matches: l.num_matches,
                            num_inliers: Some(l.estimate.num_inliers()),
                            runtime_ms,
                        },
                        Err(e) => LocalizationRecord {
                            index,
                            pose: None,
                            gt_pose,
                            error: Some(e.to_string()),
                            num_matches: 0,
                            num_inliers: None,
                            runtime_ms,
                        },
                    }
                })
                .collect();
            let rep = LocalizationReport { queries: records };
            std::fs::write(&report, rep.to_json()).with_context(|| format!("writing {}", report.display()))?;
            let n_ok = rep.num_localized();
            println!("localized {n_ok}/{} queries -> {}", rep.queries.len(), report.display());
            if timing {
                let total: f64 = rep.queries.iter().filter_map(|q| q.runtime_ms).sum();
                eprintln!("mean runtime {:.2} ms/query", total / rep.queries.len().max(1) as f64);
            }
            if !rep.queries.is_empty() && n_ok == 0 {
                return Ok(Outcome::AllFailed);
            }
        }
        Command::Attack {
            cloud,
            gt_sidecar,
            k,
            bandwidth,
            out_csv,
        } => {
            let c = io::load_cloud(&cloud).with_context(|| format!("reading {}", cloud.display()))?;
            let gt = gt_sidecar
                .as_deref()
                .map(|p| io::load_sidecar(p).with_context(|| format!("reading {}", p.display())))
                .transpose()?
                .map(|s| s.positions());
            let cfg = AttackConfig {
                k_neighbors: k,
                bandwidth: match bandwidth {
                    Some(b) => Bandwidth::Absolute(b),
                    None => AttackConfig::default().bandwidth,
                },
            };
            let target = match &c {
                Cloud::Sphere(sc) => AttackTarget::Sphere(sc),
                Cloud::Lines(lc) => AttackTarget::Lines(lc),
                Cloud::Points(_) => bail!("{} is a plain point cloud; nothing to attack", cloud.display()),
            };
            let res = run_attack(target, &cfg, gt.as_deref())?;
            if let Some(p) = &out_csv {
                let mut s = String::from("index,x,y,z,e_g\n");
                for (i, g) in res.recovered.iter().enumerate() {
                    let e = res.errors.as_ref().and_then(|e| e[i]).map(|v| v.to_string()).unwrap_or_default();
                    s.push_str(&format!("{i},{},{},{},{e}\n", g.x, g.y, g.z));
                }
                std::fs::write(p, s).with_context(|| format!("writing {}", p.display()))?;
            }
            let mut summary = serde_json::json!({
                "lines": res.recovered.len(),
                "k": k,
                "bandwidth": res.bandwidth,
            });
            let mut errors = res.known_errors();
            if !errors.is_empty() {
                errors.sort_by(f64::total_cmp);
                let pct = |p: f64| errors[((p * errors.len() as f64).ceil() as usize).clamp(1, errors.len()) - 1];
                summary["with_ground_truth"] = errors.len().into();
                summary["e_g"] = serde_json::json!({
                    "p10": pct(0.10),
                    "p25": pct(0.25),
                    "median": median(&errors),
                    "p75": pct(0.75),
                    "p90": pct(0.90),
                });
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Synth {
            points,
            cameras,
            extent,
            descriptor_dim,
            layout,
            depth_noise,
            pixel_noise,
            outlier_rate,
            seed,
            out_dir,
        } => {
            let layout = match layout {
                Layout::Box => SceneLayout::UniformBox,
                Layout::Room => SceneLayout::ROOM,
            };
            let scene =
                generate_scene(&SceneSpec::new(points, cameras, extent, descriptor_dim, seed).with_layout(layout))?;
            let scene = apply_noise(
                &scene,
                &NoiseSpec {
                    depth_noise_rel: depth_noise,
                    pixel_noise_px: pixel_noise,
                    outlier_rate,
                },
                seed,
            )?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let pts = out_dir.join("points.pntc");
            let qry = out_dir.join("queries.qry");
            io::save_cloud(&pts, &Cloud::Points(scene.point_cloud.clone()))?;
            io::save_queries(&qry, &scenegen::queries(&scene))?;
            let n_obs: usize = scene.cameras.iter().map(|c| c.observations.len()).sum();
            println!(
                "{} points, {} queries ({n_obs} keypoints) -> {}",
                scene.point_cloud.len(),
                scene.cameras.len(),
                out_dir.display()
            );
        }
        Command::Eval {
            report,
            thresholds,
            out,
            csv,
        } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let rep = LocalizationReport::from_json(&text).with_context(|| format!("parsing {}", report.display()))?;
            let m = rep.metrics(&thresholds)?;
            if let Some(p) = &out {
                std::fs::write(p, m.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = &csv {
                std::fs::write(p, m.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            let s = &m.summary;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!(
                "queries {} localized {} failed {} | median dR {} deg, median dt {} cm | recall dR<{} {:.1}%, dt<{} {:.1}%, both {:.1}%",
                s.num_queries,
                s.num_localized,
                s.num_failed,
                fmt(s.median_rotation_deg),
                fmt(s.median_translation_cm),
                thresholds.rotation_deg,
                s.recall_rotation * 100.0,
                thresholds.translation_cm,
                s.recall_translation * 100.0,
                s.recall_both * 100.0
            );
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::AllFailed) => {
            eprintln!("error: no query could be localized");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
