//! The run loop. Dynamics and both controllers advance every `dt_fast_s`;
//! photon counts are drawn once per bin from the bin-averaged click
//! probability, or once per gate when `per_gate_sampling` is set.
//!
//! Every stochastic subsystem draws from its own ChaCha stream derived from
//! the seed, so switching the count sampler does not perturb the optical
//! trajectory.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::{
    advance_birefringence, advance_phase, advance_unlocked, arm_unitary_at, ArmState, ChannelPlan,
    PhaseDriftState, UnlockedSegmentState,
};
use crate::config::{ArmConfig, ScenarioConfig};
use crate::control::{
    lock_calibration, phase_lock_step, pol_control_step, pol_feedback_signals, LockCalibration,
    PhaseLockState, PolControllerState,
};
use crate::detection::{detection_prob_unchecked, sample_counts, CountSeries};
use crate::error::{Error, Result};
use crate::interferometer::{
    fringe_terms, propagate, split_input, ChannelField, FringeTerms, Port, Stretcher,
};
use crate::optics::{random_su2, wrap_pi, JonesMatrix, JonesVector};

const STREAM_INIT: u64 = 0;
const STREAM_POL: u64 = 1;
const STREAM_PHASE: u64 = 2;
const STREAM_UNLOCKED: u64 = 3;
const STREAM_SENSOR: u64 = 4;
const STREAM_PD: u64 = 5;
const STREAM_COUNTS: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Per-bin ground truth that the detectors cannot see directly.
#[derive(Clone, Debug, PartialEq)]
pub struct BinDiagnostics {
    /// Bin centre, seconds after warm-up.
    pub time_s: f64,
    /// Bin-mean `|⟨arm1|arm2⟩|` of the quantum channel at the output coupler.
    pub overlap_q: f64,
    pub overlap_ph: f64,
    /// Bin-mean fringe contrast of the quantum channel, including the path term.
    pub visibility_q: f64,
    /// Mean clicks in the bin, dark counts included.
    pub expected_counts: f64,
    /// Quantum-channel fringe phase at the end of the bin, wrapped to (−π, π].
    pub phase_q: f64,
    pub phase_ph: f64,
    /// RMS distance of the phase-reference fringe from the lock point.
    pub lock_error_rms: f64,
    /// Phase-reference fringes swept during the bin.
    pub ph_fringes: f64,
    /// Summed feedback transmissions of each arm at the end of the bin, in [0, 2].
    pub pol_objective: [f64; 2],
    /// Cumulative stretcher recentring events.
    pub stretcher_resets: u64,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub counts: CountSeries,
    /// `(time_s, intensity)` samples of the phase-reference photodiode.
    pub pd: Vec<(f64, f64)>,
    pub diagnostics: Vec<BinDiagnostics>,
    pub calibration: Option<LockCalibration>,
}

struct Streams {
    pol: ChaCha8Rng,
    phase: ChaCha8Rng,
    unlocked: ChaCha8Rng,
    sensor: ChaCha8Rng,
    pd: ChaCha8Rng,
    counts: ChaCha8Rng,
}

/// Observables of one fast step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Click probability per gate during the step.
    pub click_prob: f64,
    /// Photodiode reading used by the lock.
    pub pd: f64,
    /// Phase-reference fringe phase, unwrapped.
    pub psi_ph: f64,
    pub psi_q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LockMode {
    Off,
    Idle,
    Calibrating,
    Locked,
}

/// Mutable state of one simulated interferometer.
pub struct Simulation {
    cfg: ScenarioConfig,
    plan: ChannelPlan,
    arms: [ArmState; 2],
    controllers: [PolControllerState; 2],
    unlocked: UnlockedSegmentState,
    stretcher: Stretcher,
    lock: PhaseLockState,
    lock_mode: LockMode,
    q_in: ChannelField,
    ph_in: ChannelField,
    q_terms: FringeTerms,
    ph_terms: FringeTerms,
    output_transmission: f64,
    pd_noise: Option<Normal<f64>>,
    sensor_noise: Option<Normal<f64>>,
    rng: Streams,
    step: u64,
    dt: f64,
    steps_per_pol: u64,
}

fn build_arm(cfg: &ArmConfig, plan: &ChannelPlan, hosts_unlocked: bool, rng: &mut ChaCha8Rng) -> Result<ArmState> {
    let arm = ArmState {
        length_km: cfg.length_km,
        loss_db: cfg.total_loss_db(),
        birefringence: random_su2(rng),
        reference_nm: plan.lambda_q_nm,
        kappa_per_nm: cfg.kappa_per_nm,
        phase: 0.0,
        sigma_pol: cfg.sigma_pol,
        phase_drift: PhaseDriftState::new(
            cfg.phase_diffusion,
            cfg.fast_amplitude_rad,
            cfg.fast_freq_hz,
            cfg.fast_offset_rad,
        )?,
        stretcher_offset: 0.0,
        hosts_unlocked,
    };
    arm.validate()?;
    Ok(arm)
}

fn noise(sigma: f64) -> Result<Option<Normal<f64>>> {
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma)
        .map(Some)
        .map_err(|e| Error::invalid(e.to_string()))
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        cfg.resolve_flags();
        let plan = cfg.channels.clone();
        let mut init = stream(cfg.seed, STREAM_INIT);
        let arms = [
            build_arm(&cfg.arm1, &plan, false, &mut init)?,
            build_arm(&cfg.arm2, &plan, true, &mut init)?,
        ];

        let pc = &cfg.pol_control;
        let refs = pc.references_deg.map(|d| JonesVector::linear(d.to_radians()));
        let analyzers = pc.analyzers_deg.map(|d| JonesVector::linear(d.to_radians()));
        let mut ctrl = PolControllerState::new(refs, analyzers, pc.dither_rad, pc.step_gain)?;
        ctrl.enabled = pc.enabled;
        let controllers = [ctrl.clone(), ctrl];

        let st = &cfg.stretcher;
        let stretcher = Stretcher::new(st.gain, st.stroke, st.slew)?;
        let mut lock = PhaseLockState::new(cfg.phase_lock.kp, cfg.phase_lock.ki);
        lock.enabled = false;
        let lock_mode = if cfg.phase_lock.enabled { LockMode::Idle } else { LockMode::Off };

        let src = &cfg.source;
        let q_in = ChannelField::new(
            plan.lambda_q_nm,
            JonesVector::linear(src.q_angle_deg.to_radians()),
            src.mean_photons,
        )?;
        let ph_in = ChannelField::new(
            plan.lambda_ph_nm,
            JonesVector::linear(src.ph_angle_deg.to_radians()),
            src.ph_power,
        )?;

        let unlocked = UnlockedSegmentState {
            residual: 0.0,
            ramp_rate: cfg.unlocked.ramp_rate,
            diffusion: cfg.unlocked.diffusion,
        };
        let rng = Streams {
            pol: stream(cfg.seed, STREAM_POL),
            phase: stream(cfg.seed, STREAM_PHASE),
            unlocked: stream(cfg.seed, STREAM_UNLOCKED),
            sensor: stream(cfg.seed, STREAM_SENSOR),
            pd: stream(cfg.seed, STREAM_PD),
            counts: stream(cfg.seed, STREAM_COUNTS),
        };
        let idle = FringeTerms {
            mean: 0.0,
            amplitude: 0.0,
            phase: 0.0,
            overlap: 0.0,
        };
        let mut sim = Self {
            output_transmission: db_to_linear(cfg.interferometer.output_loss_db),
            pd_noise: noise(cfg.photodiode.noise_sigma)?,
            sensor_noise: noise(cfg.pol_control.sensor_noise)?,
            dt: cfg.dt_fast_s,
            steps_per_pol: cfg.steps_per_pol_update() as u64,
            plan,
            arms,
            controllers,
            unlocked,
            stretcher,
            lock,
            lock_mode,
            q_in,
            ph_in,
            q_terms: idle,
            ph_terms: idle,
            rng,
            step: 0,
            cfg,
        };
        sim.refresh_fringes()?;
        Ok(sim)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn arms(&self) -> &[ArmState; 2] {
        &self.arms
    }

    pub fn controllers(&self) -> &[PolControllerState; 2] {
        &self.controllers
    }

    pub fn lock(&self) -> &PhaseLockState {
        &self.lock
    }

    /// Cached fringe descriptions of the quantum and phase-reference channels.
    pub fn fringes(&self) -> (FringeTerms, FringeTerms) {
        (self.q_terms, self.ph_terms)
    }

    /// Simulated time since the start of warm-up.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    fn channel_terms(&self, input: &ChannelField) -> Result<FringeTerms> {
        let (a, b) = split_input(input);
        // Arm phases are applied per fast step; only the polarisation part is cached.
        let still = |arm: &ArmState| ArmState {
            phase: 0.0,
            stretcher_offset: 0.0,
            ..arm.clone()
        };
        let f1 = propagate(&a, &still(&self.arms[0]), &self.controllers[0].compensator(), &self.plan, 0.0)?;
        let f2 = propagate(&b, &still(&self.arms[1]), &self.controllers[1].compensator(), &self.plan, 0.0)?;
        let mut terms = fringe_terms(&f1, &f2)?;
        terms.amplitude *= self.cfg.interferometer.v_path;
        Ok(terms)
    }

    fn refresh_fringes(&mut self) -> Result<()> {
        self.q_terms = self.channel_terms(&self.q_in)?;
        self.ph_terms = self.channel_terms(&self.ph_in)?;
        Ok(())
    }

    /// Noise-free summed feedback transmission of each arm.
    pub fn pol_objective(&self) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for (k, arm) in self.arms.iter().enumerate() {
            let ctrl = &self.controllers[k];
            let comp = ctrl.compensator();
            let u1 = comp * arm_unitary_at(arm, &self.plan, self.plan.lambda_p1_nm)?;
            let u2 = comp * arm_unitary_at(arm, &self.plan, self.plan.lambda_p2_nm)?;
            let (a, b) = pol_feedback_signals(&u1, &u2, ctrl);
            out[k] = a + b;
        }
        Ok(out)
    }

    fn pol_update(&mut self) -> Result<()> {
        let interval = self.steps_per_pol as f64 * self.dt;
        for k in 0..2 {
            advance_birefringence(&mut self.arms[k], interval, &mut self.rng.pol)?;
            if !self.controllers[k].enabled {
                continue;
            }
            let arm = &self.arms[k];
            let b1 = arm_unitary_at(arm, &self.plan, self.plan.lambda_p1_nm)?;
            let b2 = arm_unitary_at(arm, &self.plan, self.plan.lambda_p2_nm)?;
            let sensor_noise = self.sensor_noise;
            let sensor_rng = &mut self.rng.sensor;
            let ctrl = &mut self.controllers[k];
            let probe = ctrl.clone();
            pol_control_step(ctrl, |ret| {
                let comp: JonesMatrix = probe.compensator_for(ret);
                let (mut p1, mut p2) = pol_feedback_signals(&(comp * b1), &(comp * b2), &probe);
                if let Some(n) = sensor_noise {
                    p1 += n.sample(sensor_rng);
                    p2 += n.sample(sensor_rng);
                }
                (p1, p2)
            });
        }
        self.refresh_fringes()
    }

    /// Freezes or releases both polarisation controllers.
    pub fn set_pol_control(&mut self, enabled: bool) {
        for c in &mut self.controllers {
            c.enabled = enabled;
        }
    }

    fn read_pd(&mut self, psi_ph: f64) -> f64 {
        let clean = self.output_transmission * (self.ph_terms.mean + self.ph_terms.amplitude * psi_ph.cos());
        match self.pd_noise {
            Some(n) => (clean + n.sample(&mut self.rng.pd)).max(0.0),
            None => clean,
        }
    }

    fn ph_phase(&self) -> f64 {
        self.ph_terms.phase + self.arms[1].phase + self.arms[1].stretcher_offset - self.arms[0].phase
    }

    /// Advances the whole system by one `dt_fast_s` step.
    pub fn fast_step(&mut self) -> Result<StepOutput> {
        self.step += 1;
        let t = self.time();
        let dt = self.dt;
        for arm in &mut self.arms {
            arm.phase = advance_phase(&mut arm.phase_drift, t, dt, &mut self.rng.phase)?;
        }
        let residual = advance_unlocked(&mut self.unlocked, dt, &mut self.rng.unlocked);
        if self.step % self.steps_per_pol == 0 {
            self.pol_update()?;
        }

        // All observables are sampled at the same instant; the new stretcher
        // position takes effect from the next step on.
        let psi_ph = self.ph_phase();
        let psi_q = self.q_terms.phase + self.arms[1].phase + self.arms[1].stretcher_offset + residual
            - self.arms[0].phase;
        let mu = self.output_transmission * self.q_terms.at(psi_q - self.q_terms.phase, Port::One);
        let pd = self.read_pd(psi_ph);

        if self.lock_mode == LockMode::Locked {
            let command = phase_lock_step(&mut self.lock, pd, dt)?;
            self.stretcher.apply(command, dt);
            if self.stretcher.out_of_range {
                self.lock.recentre(&mut self.stretcher);
            }
            self.arms[1].stretcher_offset = self.stretcher.offset();
        }

        Ok(StepOutput {
            click_prob: detection_prob_unchecked(mu, &self.cfg.detector),
            pd,
            psi_ph,
            psi_q,
        })
    }

    /// Sweeps the stretcher over the configured travel, then calibrates and
    /// engages the lock.
    fn calibrate_lock(&mut self) -> Result<LockCalibration> {
        let pl = &self.cfg.phase_lock;
        let n = ((pl.calibration_time_s / self.dt).round() as usize).max(3);
        let rate = pl.calibration_travel_rad / (self.stretcher.gain * n as f64);
        let start = self.stretcher.command;
        let travel = pl.calibration_travel_rad;
        self.lock_mode = LockMode::Calibrating;
        let mut samples = Vec::with_capacity(n);
        for i in 1..=n {
            let out = self.fast_step()?;
            samples.push(out.pd);
            self.stretcher.apply(start + rate * i as f64, self.dt);
            self.arms[1].stretcher_offset = self.stretcher.offset();
        }
        let cal = lock_calibration(&samples, travel)?;
        self.lock.calibration = Some(cal);
        self.lock.command = self.stretcher.command;
        self.lock.integrator = 0.0;
        self.lock.enabled = true;
        self.lock_mode = LockMode::Locked;
        Ok(cal)
    }

    /// Runs the warm-up: polarisation control settles, and with the lock
    /// enabled a calibration sweep is placed in the middle of the interval.
    pub fn warm_up(&mut self) -> Result<Option<LockCalibration>> {
        let total = (self.cfg.warmup_s / self.dt).round() as u64;
        let mut calibration = None;
        if self.lock_mode == LockMode::Idle {
            let cal_steps = (self.cfg.phase_lock.calibration_time_s / self.dt).round() as u64;
            let before = total.saturating_sub(cal_steps) / 2;
            for _ in 0..before {
                self.fast_step()?;
            }
            calibration = Some(self.calibrate_lock()?);
        }
        while self.step < total {
            self.fast_step()?;
        }
        if !self.cfg.pol_control_after_warmup() {
            self.set_pol_control(false);
        }
        Ok(calibration)
    }
}

#[derive(Default)]
struct BinAccumulator {
    prob: f64,
    overlap_q: f64,
    overlap_ph: f64,
    visibility_q: f64,
    lock_err2: f64,
    turns: u64,
    steps: u64,
}

/// Runs one scenario from a validated configuration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    let mut sim = Simulation::new(cfg)?;
    let calibration = sim.warm_up()?;
    let cfg = sim.config().clone();

    let n_bins = cfg.n_bins();
    let steps_per_bin = cfg.steps_per_bin();
    let steps_per_pd = cfg.steps_per_pd_sample();
    let gates_per_bin = (cfg.bin_s * cfg.detector.gate_rate_hz).round() as u64;
    let gates_per_step = cfg.detector.gate_rate_hz * cfg.dt_fast_s;
    let t0 = sim.time();

    let mut raw = Vec::with_capacity(n_bins);
    let mut diagnostics = Vec::with_capacity(n_bins);
    let mut pd = Vec::with_capacity(n_bins * steps_per_bin / steps_per_pd);
    let mut prev_psi = sim.ph_phase();
    let mut unwrapped = prev_psi;
    let mut prev_turn = (unwrapped / (2.0 * PI)).floor();

    for bin in 0..n_bins {
        let mut acc = BinAccumulator::default();
        let mut clicks = 0u64;
        let mut last = None;
        for s in 0..steps_per_bin {
            let out = sim.fast_step()?;
            let (q, ph) = sim.fringes();
            acc.prob += out.click_prob;
            acc.overlap_q += q.overlap;
            acc.overlap_ph += ph.overlap;
            acc.visibility_q += q.visibility();
            if cfg.phase_lock.enabled {
                acc.lock_err2 += wrap_pi(out.psi_ph + FRAC_PI_2).powi(2);
            }
            // The cached fringe phase may jump by 2π when its argument wraps,
            // so fringes are counted on the unwrapped phase.
            unwrapped += wrap_pi(out.psi_ph - prev_psi);
            prev_psi = out.psi_ph;
            let turn = (unwrapped / (2.0 * PI)).floor();
            acc.turns += (turn - prev_turn).abs() as u64;
            prev_turn = turn;
            acc.steps += 1;
            if cfg.per_gate_sampling && sim.rng.counts.gen::<f64>() < out.click_prob {
                clicks += 1;
            }
            if (s + 1) % steps_per_pd == 0 {
                pd.push((sim.time() - t0, out.pd));
            }
            last = Some(out);
        }
        let n = acc.steps as f64;
        if !cfg.per_gate_sampling {
            clicks = sample_counts((acc.prob / n).clamp(0.0, 1.0), gates_per_bin, &mut sim.rng.counts)?;
        }
        raw.push(clicks);
        let last = last.expect("bins hold at least one step");
        diagnostics.push(BinDiagnostics {
            time_s: (bin as f64 + 0.5) * cfg.bin_s,
            overlap_q: acc.overlap_q / n,
            overlap_ph: acc.overlap_ph / n,
            visibility_q: acc.visibility_q / n,
            expected_counts: acc.prob * gates_per_step,
            phase_q: wrap_pi(last.psi_q),
            phase_ph: wrap_pi(last.psi_ph),
            lock_error_rms: if cfg.phase_lock.enabled { (acc.lock_err2 / n).sqrt() } else { f64::NAN },
            ph_fringes: acc.turns as f64,
            pol_objective: sim.pol_objective()?,
            stretcher_resets: sim.lock().resets,
        });
    }

    let counts = CountSeries::from_raw(raw, &cfg.detector, cfg.bin_s)?;
    Ok(RunResult {
        config: cfg,
        counts,
        pd,
        diagnostics,
        calibration,
    })
}
