//! Closed-loop steering: a drifting sensor, an analysis agent that watches a
//! rolling mean, and corrections fed back to the instrument through the service.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Agent, AgentConfig, SubscribeOptions};
use crate::wire::DataMessage;
use crate::{Error, Result};

pub const SENSOR_TOPIC: &str = "mdml.demo.sensor";
pub const CONTROL_TOPIC: &str = "mdml.demo.control";
pub const SETPOINT: f64 = 50.0;
pub const BAND: (f64, f64) = (45.0, 55.0);
pub const WINDOW: usize = 10;
pub const RATE_HZ: f64 = 10.0;
/// Half-width of the uniform measurement noise.
pub const NOISE: f64 = 1.5;

pub fn in_band(v: f64) -> bool {
    (BAND.0..=BAND.1).contains(&v)
}

/// Rolling-mean band controller. When the mean leaves the band it asks for the
/// offset that would bring it back to the setpoint and starts a fresh window, so
/// samples taken before the correction landed never trigger another one.
#[derive(Debug, Clone)]
pub struct Controller {
    window: VecDeque<f64>,
    size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub mean: f64,
    pub correction: Option<f64>,
}

impl Default for Controller {
    fn default() -> Self {
        Controller::new(WINDOW)
    }
}

impl Controller {
    pub fn new(size: usize) -> Self {
        Controller { window: VecDeque::with_capacity(size), size: size.max(1) }
    }

    pub fn observe(&mut self, value: f64) -> Observation {
        if self.window.len() == self.size {
            self.window.pop_front();
        }
        self.window.push_back(value);
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        let correction = (!in_band(mean)).then(|| {
            self.window.clear();
            SETPOINT - mean
        });
        Observation { mean, correction }
    }
}

/// Runs a controller over a recorded sequence, returning `(index, correction)` pairs.
pub fn analyze(values: impl IntoIterator<Item = f64>) -> Vec<(usize, f64)> {
    let mut c = Controller::default();
    values.into_iter().enumerate().filter_map(|(i, v)| c.observe(v).correction.map(|x| (i, x))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub at: Duration,
    pub magnitude: f64,
}

/// The instrument: setpoint plus accumulated offset plus seeded noise.
#[derive(Debug, Clone)]
pub struct Plant {
    rng: ChaCha8Rng,
    offset: f64,
    tick: u64,
    step_tick: Option<(u64, f64)>,
}

impl Plant {
    pub fn new(seed: u64, disturbance: Option<Disturbance>) -> Self {
        let step_tick = disturbance.map(|d| ((d.at.as_secs_f64() * RATE_HZ).round() as u64, d.magnitude));
        Plant { rng: ChaCha8Rng::seed_from_u64(seed), offset: 0.0, tick: 0, step_tick }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sample(&mut self) -> f64 {
        if let Some((at, magnitude)) = self.step_tick {
            if self.tick == at {
                self.offset += magnitude;
            }
        }
        self.tick += 1;
        SETPOINT + self.offset + self.rng.gen_range(-NOISE..=NOISE)
    }

    pub fn apply(&mut self, correction: f64) {
        self.offset += correction;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tick: u64,
    pub t_secs: f64,
    pub value: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub left_at_secs: f64,
    pub reentered_at_secs: Option<f64>,
}

impl Excursion {
    pub fn recovery_secs(&self) -> Option<f64> {
        self.reentered_at_secs.map(|r| r - self.left_at_secs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn corrections(&self) -> Vec<(u64, f64)> {
        self.entries.iter().filter_map(|e| e.correction.map(|c| (e.tick, c))).collect()
    }

    /// Stretches of time during which the rolling mean sat outside the band.
    pub fn excursions(&self) -> Vec<Excursion> {
        let mut out: Vec<Excursion> = Vec::new();
        let mut open: Option<f64> = None;
        for e in &self.entries {
            match (open, in_band(e.mean)) {
                (None, false) => open = Some(e.t_secs),
                (Some(left), true) => {
                    out.push(Excursion { left_at_secs: left, reentered_at_secs: Some(e.t_secs) });
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(left) = open {
            out.push(Excursion { left_at_secs: left, reentered_at_secs: None });
        }
        out
    }

    /// True when every excursion ended within `limit`.
    pub fn settles_within(&self, limit: Duration) -> bool {
        self.excursions().iter().all(|x| x.recovery_secs().is_some_and(|r| r <= limit.as_secs_f64() + 1e-9))
    }

    pub fn value_at(&self, t: Duration) -> Option<f64> {
        let tick = (t.as_secs_f64() * RATE_HZ).round() as u64;
        self.entries.iter().find(|e| e.tick == tick).map(|e| e.value)
    }

    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.entries.iter().map(|e| {
            let mut line = format!("t={:>6.2}s value={:>7.2} mean={:>7.2}", e.t_secs, e.value, e.mean);
            if let Some(c) = e.correction {
                line.push_str(&format!(" correction={c:+.2}"));
            }
            line
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringOptions {
    pub duration: Duration,
    pub seed: u64,
    pub disturbance: Option<Disturbance>,
}

impl Default for SteeringOptions {
    fn default() -> Self {
        SteeringOptions {
            duration: Duration::from_secs(10),
            seed: 2021,
            disturbance: Some(Disturbance { at: Duration::from_secs(5), magnitude: 20.0 }),
        }
    }
}

fn reading(tick: u64, value: f64) -> Vec<u8> {
    serde_json::to_vec(&json!({"tick": tick, "t": tick as f64 / RATE_HZ, "value": value})).expect("reading serializes")
}

/// Decodes a sensor reading into `(tick, value)`.
pub fn parse_reading(payload: &[u8]) -> Result<(u64, f64)> {
    let v: serde_json::Value = serde_json::from_slice(payload).map_err(|e| Error::NotJson(e.to_string()))?;
    match (v["tick"].as_u64(), v["value"].as_f64()) {
        (Some(t), Some(x)) => Ok((t, x)),
        _ => Err(Error::InvalidArgument(format!("not a sensor reading: {v}"))),
    }
}

fn analysis_agent(agent: Agent, mut sensor: crate::agent::Consumer, stop: Arc<AtomicBool>, transcript: Arc<Mutex<Transcript>>) -> Result<()> {
    let mut controller = Controller::default();
    while !stop.load(Ordering::SeqCst) {
        let Some(d) = sensor.recv(Some(Duration::from_millis(50)))? else { continue };
        let (tick, value) = parse_reading(&d.message.payload)?;
        let obs = controller.observe(value);
        if let Some(c) = obs.correction {
            let body = json!({"tick": tick, "mean": obs.mean, "correction": c});
            agent.produce(
                DataMessage::new(CONTROL_TOPIC, serde_json::to_vec(&body)?).with_header("content-type", "application/json"),
            )?;
        }
        transcript.lock().unwrap().entries.push(TranscriptEntry {
            tick,
            t_secs: tick as f64 / RATE_HZ,
            value,
            mean: obs.mean,
            correction: obs.correction,
        });
    }
    Ok(())
}

/// Runs sensor and analysis agents against a live service for `duration`.
pub fn steering_demo(config: &AgentConfig, opts: &SteeringOptions) -> Result<Transcript> {
    let instrument = Agent::connect(config.clone())?;
    let analyst = Agent::connect(config.clone())?;
    instrument.ensure_topic(SENSOR_TOPIC, Some(1))?;
    instrument.ensure_topic(CONTROL_TOPIC, Some(1))?;
    let sensor_feed = analyst.subscribe(&[SENSOR_TOPIC], SubscribeOptions::default())?;
    let mut control = instrument.subscribe(&[CONTROL_TOPIC], SubscribeOptions::default())?;

    let stop = Arc::new(AtomicBool::new(false));
    let transcript = Arc::new(Mutex::new(Transcript::default()));
    let worker = {
        let (stop, transcript) = (stop.clone(), transcript.clone());
        std::thread::Builder::new()
            .name("steering-analysis".into())
            .spawn(move || analysis_agent(analyst, sensor_feed, stop, transcript))?
    };

    let mut plant = Plant::new(opts.seed, opts.disturbance);
    let period = Duration::from_secs_f64(1.0 / RATE_HZ);
    let ticks = (opts.duration.as_secs_f64() * RATE_HZ).round() as u64;
    let start = Instant::now();
    let mut outcome = Ok(());
    for tick in 0..ticks {
        let due = start + period * tick as u32;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        loop {
            match control.recv(Some(Duration::ZERO)) {
                Ok(Some(d)) => {
                    let v: serde_json::Value = serde_json::from_slice(&d.message.payload)?;
                    if let Some(c) = v["correction"].as_f64() {
                        plant.apply(c);
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        if outcome.is_err() || worker.is_finished() {
            break;
        }
        let value = plant.sample();
        if let Err(e) = instrument.produce(DataMessage::new(SENSOR_TOPIC, reading(tick, value)).with_header("content-type", "application/json")) {
            outcome = Err(e);
            break;
        }
    }
    let deadline = Instant::now() + Duration::from_secs(2);
    while transcript.lock().unwrap().entries.len() < ticks as usize && Instant::now() < deadline && !worker.is_finished() {
        std::thread::sleep(Duration::from_millis(10));
    }
    stop.store(true, Ordering::SeqCst);
    worker.join().unwrap_or_else(|p| std::panic::resume_unwind(p))?;
    outcome?;
    let t = std::mem::take(&mut *transcript.lock().unwrap());
    Ok(t)
}
