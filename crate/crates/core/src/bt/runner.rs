use super::{ActionClient, Blackboard, Node, Predicate, TickCtx, TickStatus};
use crate::clock::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct RunnerConfig {
    pub tick_hz: f64,
    /// The tree is re-ticked after SUCCESS until this holds.
    pub done: Predicate,
    pub max_ticks: Option<u64>,
}

impl Default for RunnerConfig {
    fn default() -> RunnerConfig {
        RunnerConfig { tick_hz: 10.0, done: Predicate::Const(true), max_ticks: None }
    }
}

impl RunnerConfig {
    pub fn period(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.tick_hz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    /// RUNNING means the run was stopped before the tree finished.
    pub status: TickStatus,
    pub ticks: u64,
}

/// Ticks `root` until it finishes. RUNNING advances the clock by one tick
/// period; SUCCESS is followed by an immediate re-tick unless `done` holds.
/// `keep_going` is consulted after every tick; returning false stops the
/// run and halts the tree.
pub fn run_tree(
    root: &mut Node,
    bb: &mut Blackboard,
    client: &mut dyn ActionClient,
    cfg: &RunnerConfig,
    mut keep_going: impl FnMut(&mut Blackboard) -> bool,
) -> RunOutcome {
    let dt = cfg.period();
    let mut ticks = 0;
    loop {
        let now = client.now();
        let status = {
            let mut ctx = TickCtx { bb: &mut *bb, client: &mut *client, now };
            root.tick(&mut ctx)
        };
        ticks += 1;
        match status {
            TickStatus::Failure => return RunOutcome { status, ticks },
            TickStatus::Success if cfg.done.eval(bb) => return RunOutcome { status, ticks },
            TickStatus::Success => {}
            TickStatus::Running => {
                client.advance(dt);
            }
        }
        if !keep_going(&mut *bb) || cfg.max_ticks.is_some_and(|m| ticks >= m) {
            let now = client.now();
            let mut ctx = TickCtx { bb: &mut *bb, client: &mut *client, now };
            root.halt(&mut ctx);
            return RunOutcome { status: TickStatus::Running, ticks };
        }
    }
}
