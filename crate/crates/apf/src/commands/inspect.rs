use std::fmt::Write as _;
use std::path::PathBuf;

use apf_core::accounting::{model_layout, tally, Accounting, TensorSpec};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::io::checkpoint;

#[derive(Clone, Debug, Default)]
pub struct InspectArgs {
    /// Checkpoint to read. Without one, the configured model's layout is reported.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InspectReport {
    pub tensors: Vec<TensorSpec>,
    pub totals: Accounting,
    /// Totals for the configured model, when a configuration was given.
    pub analytic: Option<Accounting>,
}

impl InspectReport {
    pub fn render(&self) -> String {
        let name_w = self.tensors.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let _ = writeln!(s, "{:<name_w$}  {:<18}  {:<5}  {:<9}  {:>12}", "name", "shape", "dtype", "trainable", "params");
        for t in &self.tensors {
            let shape = format!("{:?}", t.shape);
            let _ = writeln!(s, "{:<name_w$}  {:<18}  {:<5}  {:<9}  {:>12}", t.name, shape, "f32", if t.trainable { "yes" } else { "no" }, t.numel());
        }
        let a = &self.totals;
        let _ = writeln!(s);
        let _ = writeln!(s, "tensors            {}", a.tensors);
        let _ = writeln!(s, "frozen             {}", a.frozen);
        let _ = writeln!(s, "trainable          {}", a.trainable);
        let _ = writeln!(s, "  adapter matrices {}", a.adapter_matrices);
        let _ = writeln!(s, "  adapter norms    {}", a.adapter_norms);
        let _ = writeln!(s, "  embedding        {}", a.embedding);
        let _ = writeln!(s, "  head             {}", a.head);
        if let Some(x) = &self.analytic {
            let _ = writeln!(s, "analytic trainable {} frozen {}", x.trainable, x.frozen);
        }
        s
    }
}

fn totals(tensors: &[TensorSpec]) -> Accounting {
    tally(tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice(), t.trainable)))
}

/// Reads a checkpoint directory (payloads are checked too) and tallies it. With
/// `config`, totals must equal the configured model's, else a data error.
pub fn cmd_inspect(args: &InspectArgs, config: Option<&RunConfig>) -> AppResult<InspectReport> {
    let analytic = config.map(|c| totals(&model_layout(&c.model)));
    let tensors = match &args.checkpoint {
        Some(p) => {
            let entries = checkpoint::read_checkpoint(p).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
            entries.into_iter().map(|e| TensorSpec { name: e.name, shape: e.shape, trainable: e.trainable }).collect()
        }
        None => match config {
            Some(c) => model_layout(&c.model),
            None => return Err(AppError::Config("inspect needs a checkpoint path or a model configuration".into())),
        },
    };
    let report = InspectReport { totals: totals(&tensors), tensors, analytic };
    if let Some(a) = &report.analytic {
        if *a != report.totals {
            return Err(AppError::Data(format!(
                "checkpoint totals (trainable {}, frozen {}) differ from the configured model (trainable {}, frozen {})",
                report.totals.trainable, report.totals.frozen, a.trainable, a.frozen
            )));
        }
    }
    Ok(report)
}
