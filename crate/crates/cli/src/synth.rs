use std::process::ExitCode;

use clap::Args;
use image::{Rgb, RgbImage};
use lanedrive::detectors::{DetectionContext, LazyFrame};
use lanedrive::driving::{closed_loop, DrivingError, RolloutOptions};
use lanedrive::geometry::PoseDelta;
use nalgebra::Point2;

use crate::config::RunConfig;
use crate::scenarios::slug;
use crate::{create_dir, internal, scenarios, write_run_record, CliError};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Control steps to roll out; defaults to the E2E horizon.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "start-frame", default_value_t = 0)]
    start_frame: usize,
    /// Initial lateral offset from the recorded pose, meters (positive left).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f64,
}

fn draw_line(img: &mut RgbImage, line: &[Point2<f64>], color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: f64, y: f64| {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && py >= 0 && px < w && py < h {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    };
    for seg in line.windows(2) {
        let n = ((seg[1] - seg[0]).norm().ceil() as usize).max(1);
        for k in 0..=n {
            let p = seg[0] + (seg[1] - seg[0]) * (k as f64 / n as f64);
            put(p.x, p.y);
        }
    }
    if let [p] = line {
        put(p.x, p.y);
    }
}

pub fn run(cfg: &RunConfig, args: &SynthArgs) -> Result<ExitCode, CliError> {
    let first = cfg.scenarios.first().cloned().into_iter().collect::<Vec<_>>();
    let s = scenarios::load_all(&first)?.remove(0);
    let spec = scenarios::parse_detectors(&cfg.detectors)?.remove(0);
    write_run_record(cfg, "synth-frames")?;
    let dir = cfg.output.join(format!("synth_{}__{}", slug(&s.id), slug(&spec.to_string())));
    create_dir(&dir)?;
    let mut det = spec.build(cfg.timeout()).map_err(|e| CliError::Usage(format!("detector {spec}: {e}")))?;
    let opts = RolloutOptions {
        start_frame: args.start_frame,
        initial_offset: PoseDelta::new(0.0, args.offset, 0.0),
        steps: Some(args.steps.unwrap_or(cfg.sim.e2e_horizon)),
    };
    let trace = match closed_loop(&s, det.as_mut(), &cfg.sim, &opts) {
        Ok(t) => t,
        Err(DrivingError::EvaluationFailure { reason, trace }) => {
            eprintln!("rollout failed: {reason}; dumping the partial trace");
            *trace
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    trace.write_json(&dir.join("trace.json")).map_err(internal)?;
    for (k, step) in trace.steps.iter().enumerate() {
        let delta = s.log.pose(step.frame).delta_to(&step.state.pose());
        let frame = LazyFrame::new(&s.frames[step.frame].image, &s.homography, delta);
        let ctx = DetectionContext {
            scenario: &s,
            frame_index: step.frame,
            pose_delta: delta,
        };
        let lines = det.detect(&frame, &ctx).map(|d| d.polylines()).unwrap_or_default();
        let mut img = frame.image().map_err(internal)?.clone();
        for l in &lines {
            draw_line(&mut img, l, Rgb([230, 40, 40]));
        }
        let p = dir.join(format!("step_{k:03}.png"));
        img.save(&p).map_err(|e| internal(format!("{}: {e}", p.display())))?;
    }
    eprintln!("{} frames", trace.steps.len());
    println!("{}", dir.display());
    Ok(ExitCode::SUCCESS)
}
