//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line; the
//! test fails at the end if any criterion failed.

use std::time::Instant;

use amc::geometry::{rotational_warp, warp_jacobian, NormalizedCoord};
use amc::lk::{Template, TrackerConfig};
use amc::metrics::{MetricsSummary, SequenceMetrics};
use amc::stabilizer::render_average;
use amc::synthetic::{
    camera_intrinsics, generate_sequence, make_source, procedural_texture, relative_to_first, render_view,
    source_intrinsics, BaseSegment, ShakeTrajectory, SourceKind, SMOOTH_OCTAVES, SOURCE_SIZE,
};
use amc::{
    Frame, Intrinsics, OrientationConfig, OrientationTracker, Pipeline, PipelineConfig, PipelineOutput, Rotation,
    So3Vector, StabilizationMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: usize = 320;
const HEIGHT: usize = 180;

/// Writes past the test harness's output capture so the report is always shown.
fn emit(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        emit(format!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
        if !pass {
            self.failures.push(format!("{id} {name}"));
        }
    }
}

struct Run {
    outputs: Vec<PipelineOutput>,
    fps: f64,
}

fn run_pipeline(frames: &[Frame], k: Intrinsics, mode: StabilizationMode, fps: f64) -> Run {
    let mut cfg = PipelineConfig::for_fps(fps);
    cfg.stabilizer.mode = mode;
    let mut p = Pipeline::new(k, cfg).unwrap();
    let outputs = frames.iter().map(|f| p.process(f).unwrap()).collect();
    Run { outputs, fps: p.timings().fps() }
}

fn summarize_raw(frames: &[Frame], k: &Intrinsics, dt: f64) -> MetricsSummary {
    let rect = amc::StabilizerConfig::default().output_rect(k).unwrap();
    let mut m = SequenceMetrics::new(dt, 1);
    for f in frames {
        m.push(&rect.crop_frame(f), None, None, None).unwrap();
    }
    m.summary()
}

fn summarize_run(run: &Run, dt: f64, n_avg: u16) -> MetricsSummary {
    let mut m = SequenceMetrics::new(dt, n_avg);
    for o in &run.outputs {
        m.push(&o.frame, Some(&o.mask), Some(o.r_0j), Some(o.r_rendered)).unwrap();
    }
    m.summary()
}

fn rotation_recovery(report: &mut Report) {
    let start = Instant::now();
    let source = procedural_texture(SOURCE_SIZE, 1, 11, &SMOOTH_OCTAVES).unwrap();
    let ks = source_intrinsics(SOURCE_SIZE);
    let kc = camera_intrinsics(WIDTH, HEIGHT);
    let reference = render_view(&source, &ks, &Rotation::identity(), &kc).unwrap();
    let template = Template::build(&reference, &kc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 100;
    let mut errors = Vec::with_capacity(trials);
    for _ in 0..trials {
        let axis = loop {
            let v = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = rng.gen_range(0.0..5f64.to_radians());
        let r = So3Vector(axis * angle).exp();
        let current = render_view(&source, &ks, &r, &kc).unwrap();
        // the reference sees ray p where the current frame sees r^T p
        let err = match template.track(&current, &Rotation::identity(), &TrackerConfig::default()) {
            Ok(res) => res.rotation.geodesic_distance(&r.transpose()).to_degrees(),
            Err(_) => f64::INFINITY,
        };
        errors.push(err);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let within = errors.iter().filter(|&&e| e < 0.1).count();
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    report.line(
        1,
        "rotation recovery",
        within * 100 >= 95 * trials && worst < 0.5 && elapsed < 30.0,
        format!("{within}/{trials} under 0.1 deg (need >= 95%), worst {worst:.4} deg (< 0.5), {elapsed:.1} s (< 30 s)"),
    );
}

fn tracking_drift(report: &mut Report) {
    let source = make_source(SourceKind::Texture, SOURCE_SIZE, 1, 5).unwrap();
    let ks = source_intrinsics(SOURCE_SIZE);
    let kc = camera_intrinsics(WIDTH, HEIGHT);
    // closed loop: slow 6 deg sweep plus about 12 Hz shake, periodic over 120 frames
    let period = 120.0;
    let phase = |i: usize, k: f64| 2.0 * std::f64::consts::PI * k * i as f64 / period;
    let mut tracker = OrientationTracker::new(kc, OrientationConfig::default()).unwrap();
    let mut last = Rotation::identity();
    for i in 0..=120 {
        let w = So3Vector::new(
            3f64.to_radians() * phase(i, 1.0).sin() + 0.004 * phase(i, 24.0).sin(),
            4f64.to_radians() * phase(i, 1.0).sin() * phase(i, 1.0).cos() + 0.004 * phase(i, 24.0).cos(),
            0.003 * phase(i, 48.0).sin(),
        );
        let frame = render_view(&source, &ks, &w.exp(), &kc).unwrap();
        last = tracker.process_frame(&frame).0;
    }
    let drift = last.angle().to_degrees();
    report.line(2, "sequence tracking drift", drift < 1.0, format!("|log R_0,end| = {drift:.4} deg (< 1 deg) after 120 frames"));
}

fn jacobian_check(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = loop {
            let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if x * x + y * y < 1.0 {
                break NormalizedCoord::new(x, y);
            }
        };
        let analytic = warp_jacobian(p);
        for axis in 0..3 {
            let mut d = [0.0; 3];
            d[axis] = h;
            let plus = rotational_warp(&So3Vector::from(d).exp(), p).unwrap();
            d[axis] = -h;
            let minus = rotational_warp(&So3Vector::from(d).exp(), p).unwrap();
            let fd = [(plus.x - minus.x) / (2.0 * h), (plus.y - minus.y) / (2.0 * h)];
            for (row, value) in fd.iter().enumerate() {
                let a = analytic[(row, axis)];
                // relative error with an absolute floor for entries that vanish at p
                let rel = (a - value).abs() / a.abs().max(1e-2);
                worst = worst.max(rel);
            }
        }
    }
    report.line(8, "warp Jacobian vs finite differences", worst < 1e-4, format!("worst relative error {worst:.2e} (< 1e-4) over 1000 points"));
}

fn saccade_equivalence(report: &mut Report) {
    let (w, h) = (160usize, 90usize);
    let source = make_source(SourceKind::Texture, 1024, 3, 3).unwrap();
    let ks = source_intrinsics(1024);
    let kc = camera_intrinsics(w, h);
    let mut traj = ShakeTrajectory::flapper12();
    // fast yaw sweep (+15, -15, back to 0 deg) so the fixed view runs out of overlap repeatedly
    let yaw = 12f64.to_radians();
    traj.base = vec![
        BaseSegment { duration: 1.25, omega: [0.0, yaw, 0.0] },
        BaseSegment { duration: 2.5, omega: [0.0, -yaw, 0.0] },
        BaseSegment { duration: 1.25, omega: [0.0, yaw, 0.0] },
    ];
    traj.duration = 5.0;
    let (frames, truth) = generate_sequence(&source, &ks, &traj, &kc).unwrap();
    let truth = relative_to_first(&truth);
    let cfg = amc::StabilizerConfig { mode: StabilizationMode::Saccade, ..Default::default() };
    let rect = cfg.output_rect(&kc).unwrap();
    let mut state = amc::stabilizer::SaccadeState::new(cfg.n_avg);
    let mut worst = 0.0f64;
    let mut saccades = 0;
    for (f, r) in frames.iter().zip(&truth) {
        let out = state.push(f, r, &cfg, &kc).unwrap();
        saccades += out.saccaded as usize;
        let fixed = state.r_fixed().unwrap();
        let (batch, mask) = render_average(state.cached_frames(), &fixed, &kc, &rect, 3);
        assert_eq!(mask, out.mask);
        for (a, b) in out.frame.data().iter().zip(batch.data()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    report.line(
        6,
        "saccade recursion equals batch averaging",
        worst <= 1e-6 && saccades >= 3 && frames.len() >= 300,
        format!("max |recursive - batch| {worst:.2e} (<= 1e-6) over {} frames with {saccades} saccades (>= 3)", frames.len()),
    );
}

fn determinism(report: &mut Report, frames: &[Frame], k: Intrinsics, fps: f64) {
    let digest = |run: &Run| {
        let mut bytes = Vec::new();
        for o in &run.outputs {
            bytes.extend(o.frame.data().iter().flat_map(|v| v.to_bits().to_le_bytes()));
            bytes.extend(o.mask.counts().iter().flat_map(|v| v.to_le_bytes()));
            for r in [o.r_0j, o.r_rendered] {
                bytes.extend(r.matrix().iter().flat_map(|v| v.to_bits().to_le_bytes()));
            }
        }
        bytes
    };
    let mut same = true;
    for mode in [StabilizationMode::Smooth, StabilizationMode::Saccade] {
        let a = digest(&run_pipeline(frames, k, mode, fps));
        let b = digest(&run_pipeline(frames, k, mode, fps));
        same &= a == b;
    }
    report.line(11, "determinism", same, format!("two runs of {} frames per mode are bit-identical: {same}", frames.len()));
}

#[test]
fn acceptance() {
    let mut report = Report { failures: Vec::new() };

    rotation_recovery(&mut report);
    tracking_drift(&mut report);

    let traj = ShakeTrajectory::flapper12();
    let dt = traj.dt();
    let source = make_source(SourceKind::Texture, SOURCE_SIZE, 3, 7).unwrap();
    let ks = source_intrinsics(SOURCE_SIZE);
    let kc = camera_intrinsics(WIDTH, HEIGHT);
    let (frames, _) = generate_sequence(&source, &ks, &traj, &kc).unwrap();
    let n_avg = amc::StabilizerConfig::default().n_avg as u16;

    let none = summarize_raw(&frames, &kc, dt);
    let stab_run = run_pipeline(&frames, kc, StabilizationMode::Smooth, traj.fps);
    let stab = summarize_run(&stab_run, dt, n_avg);
    let sacc_run = run_pipeline(&frames, kc, StabilizationMode::Saccade, traj.fps);
    let sacc = summarize_run(&sacc_run, dt, n_avg);
    let saccade_frames: Vec<usize> =
        sacc_run.outputs.iter().enumerate().filter(|(_, o)| o.saccaded).map(|(i, _)| i).collect();
    emit(format!(
        "       flapper12: {} frames, none NF {:.3} px, stab NF {:.3}, sacc NF {:.3}, saccades at {:?}",
        frames.len(),
        none.nf_rms,
        stab.nf_rms,
        sacc.nf_rms,
        saccade_frames
    ));

    let (rs, rc) = (stab.nf_rms / none.nf_rms, sacc.nf_rms / none.nf_rms);
    report.line(
        3,
        "normal-flow reduction",
        (none.nf_rms - 1.1).abs() <= 0.15 && rs <= 0.55 && rc <= 0.25,
        format!("none {:.3} px (1.1 +- 0.15), stab {rs:.3}x (<= 0.55), sacc {rc:.3}x (<= 0.25)", none.nf_rms),
    );

    let (ds, dc) = (stab.delta_i_rms / none.delta_i_rms, sacc.delta_i_rms / none.delta_i_rms);
    report.line(
        4,
        "intensity-change reduction",
        ds <= 0.6 && dc <= 0.2,
        format!("none {:.4}, stab {ds:.3}x (<= 0.6), sacc {dc:.3}x (<= 0.2)", none.delta_i_rms),
    );

    let drop = 1.0 - stab.sharpness / none.sharpness;
    report.line(
        5,
        "sharpness loss from averaging",
        (0.05..=0.15).contains(&drop),
        format!("none {:.4}, stab {:.4}, reduction {:.1}% (5-15%)", none.sharpness, stab.sharpness, 100.0 * drop),
    );

    saccade_equivalence(&mut report);

    let views: Vec<Rotation> = sacc_run.outputs.iter().map(|o| o.r_rendered).collect();
    let omega = amc::metrics::angular_velocities(&views, dt);
    let moving_between = omega.iter().enumerate().filter(|&(i, &w)| w != 0.0 && !sacc_run.outputs[i + 1].saccaded).count();
    let spikes = omega.iter().enumerate().filter(|&(i, &w)| w > 0.0 && sacc_run.outputs[i + 1].saccaded).count();
    let isolated = saccade_frames.windows(2).all(|w| w[1] > w[0] + 1);
    report.line(
        7,
        "saccade view stillness",
        moving_between == 0 && spikes == saccade_frames.len() && !saccade_frames.is_empty() && isolated,
        format!(
            "{moving_between} non-zero view rates between saccades (0), {spikes} single-frame spikes for {} saccades",
            saccade_frames.len()
        ),
    );

    jacobian_check(&mut report);

    let mut violations = 0;
    let mut tracked = 0;
    for o in &stab_run.outputs {
        if o.tracking.loss_history.len() > 1 {
            tracked += 1;
        }
        violations += o.tracking.loss_history.windows(2).filter(|w| !(w[1] < w[0])).count();
    }
    report.line(
        9,
        "line-search monotonicity",
        violations == 0 && tracked > 0,
        format!("{violations} non-decreasing accepted steps over {tracked} tracked frames"),
    );

    let fps = stab_run.fps;
    let verdict = if fps >= 60.0 { "meets the 60 fps target" } else { "below the 60 fps target (hardware-dependent)" };
    report.line(
        10,
        "throughput",
        fps >= 30.0,
        format!("{fps:.1} fps at {WIDTH}x{HEIGHT}, smooth mode, one thread; {verdict}; hard floor 30 fps"),
    );

    determinism(&mut report, &frames[..240], kc, traj.fps);

    assert!(report.failures.is_empty(), "failed criteria: {:?}", report.failures);
}
