//! Square-loss training by exact block coordinate descent.

mod objective;
mod oracle;

pub use objective::{active_tasks, DenseParams, Gramians, LossBreakdown, Objective, SweepStats, Task};
pub use oracle::{loss_bruteforce, BRUTE_FORCE_MAX_TERMS};

use std::fmt::Write as _;
use std::time::Instant;

use crate::corpus::Corpus;
use crate::error::Result;
use crate::store::{init_model_state, ModelState, TrainConfig};

/// One line of the loss trace. Sweep 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub sweep: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sweep,loss_total,loss_task1,loss_task2,loss_reg,seconds\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{:.3}",
                r.sweep,
                r.loss.total(),
                r.loss.task1,
                r.loss.task2,
                r.loss.reg,
                r.seconds
            )
            .unwrap();
        }
        s
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss.total()).collect()
    }
}

/// Loss of a model's current parameters.
pub fn sl_loss(state: &ModelState, corpus: &Corpus, config: &TrainConfig) -> Result<LossBreakdown> {
    Objective::new(corpus, config)?.loss(&DenseParams::from_state(state))
}

/// Runs `config.sweeps` sweeps on an existing state, appending to `trace`.
pub fn continue_training(
    state: &mut ModelState,
    corpus: &Corpus,
    config: &TrainConfig,
    sweeps: usize,
    trace: &mut LossTrace,
) -> Result<()> {
    let obj = Objective::new(corpus, config)?;
    let start = Instant::now();
    if trace.rows.is_empty() {
        trace.rows.push(TraceRow {
            sweep: state.sweep_count,
            loss: obj.loss(&DenseParams::from_state(state))?,
            seconds: 0.0,
        });
    }
    for _ in 0..sweeps {
        obj.sweep(state)?;
        let loss = obj.loss(&DenseParams::from_state(state))?;
        log::info!("sweep {}: loss {:.6}", state.sweep_count, loss.total());
        trace.rows.push(TraceRow {
            sweep: state.sweep_count,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    state.train_config = Some(config.clone());
    Ok(())
}

/// Initializes and trains a square-loss model.
pub fn train_sl_model(corpus: &Corpus, config: &TrainConfig) -> Result<(ModelState, LossTrace)> {
    config.validate()?;
    Objective::new(corpus, config)?;
    let mut state = init_model_state(config, corpus)?;
    let mut trace = LossTrace::default();
    continue_training(&mut state, corpus, config, config.sweeps, &mut trace)?;
    Ok((state, trace))
}
