/// One epoch of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Wall-clock seconds spent on the epoch; zero when timing is disabled.
    pub seconds: f64,
    /// Batches skipped because they contributed no loss terms.
    pub skipped_batches: usize,
}

/// Per-epoch learning-curve records, epochs numbered contiguously from 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, train_loss: f64, val_loss: Option<f64>, seconds: f64, skipped_batches: usize) {
        let epoch = self.records.len();
        self.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds,
            skipped_batches,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// First epoch whose validation loss is at or below `threshold`.
    pub fn first_epoch_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.val_loss.is_some_and(|v| v <= threshold))
            .map(|r| r.epoch)
    }
}
