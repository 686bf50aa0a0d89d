//! Transient fault injection for driver runs.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::SimTime;
use crate::runtime::{ActionRun, DriverBinding, Step};

pub const INJECTED: &str = "injected fault";

/// Fails a started run with probability `p`, after up to two successful
/// steps. The inner run is cancelled first so the simulator state stays
/// consistent.
#[derive(Clone)]
pub struct FaultInjector {
    pub probability: f64,
    rng: Arc<Mutex<ChaCha8Rng>>,
    /// Action names exempt from injection.
    pub exempt: Vec<String>,
}

impl FaultInjector {
    pub fn new(probability: f64, seed: u64) -> FaultInjector {
        FaultInjector { probability, rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))), exempt: Vec::new() }
    }

    pub fn wrap(&self, binding: DriverBinding) -> DriverBinding {
        if self.probability <= 0.0 {
            return binding;
        }
        let inj = self.clone();
        binding.map_runs(move |action, started| {
            let run = started?;
            if inj.exempt.iter().any(|a| a == action) {
                return Ok(run);
            }
            let mut rng = inj.rng.lock().unwrap();
            let fail = rng.random::<f64>() < inj.probability;
            let after = rng.random_range(0..3usize);
            Ok(if fail { Box::new(Faulty { inner: run, fail_after: after, steps: 0 }) as Box<dyn ActionRun> } else { run })
        })
    }
}

struct Faulty {
    inner: Box<dyn ActionRun>,
    fail_after: usize,
    steps: usize,
}

impl ActionRun for Faulty {
    fn step(&mut self, now: SimTime) -> Step {
        if self.steps >= self.fail_after {
            self.inner.cancel();
            let _ = self.inner.step(now);
            return Step::Failed(INJECTED.into());
        }
        self.steps += 1;
        match self.inner.step(now) {
            // A run that finishes before its fault point still fails.
            Step::Done(_) => Step::Failed(INJECTED.into()),
            other => other,
        }
    }

    fn cancel(&mut self) {
        self.inner.cancel();
    }
}
