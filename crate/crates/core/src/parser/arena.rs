use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Mutex};

use super::chart::Chart;
use crate::tensor::Scalar;

/// Pool of reusable charts sized for the longest sentence of a batch.
///
/// A [`PooledChart`] returns its buffers to the pool when dropped, so charts
/// held by a tape are recycled once the tape goes away.
#[derive(Clone)]
pub struct ChartArena<F> {
    max_n: usize,
    free: Arc<Mutex<Vec<Chart<F>>>>,
}

impl<F: Scalar> ChartArena<F> {
    pub fn new(max_n: usize) -> Self {
        ChartArena {
            max_n,
            free: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn take(&self) -> PooledChart<F> {
        let chart = self
            .free
            .lock()
            .map(|mut free| free.pop())
            .ok()
            .flatten()
            .unwrap_or_else(|| Chart::with_capacity(self.max_n));
        PooledChart {
            chart: Some(chart),
            pool: Arc::clone(&self.free),
        }
    }

    /// Charts currently available for reuse.
    pub fn available(&self) -> usize {
        self.free.lock().map(|f| f.len()).unwrap_or(0)
    }
}

/// A chart borrowed from a [`ChartArena`].
pub struct PooledChart<F> {
    chart: Option<Chart<F>>,
    pool: Arc<Mutex<Vec<Chart<F>>>>,
}

impl<F> Deref for PooledChart<F> {
    type Target = Chart<F>;

    fn deref(&self) -> &Chart<F> {
        self.chart.as_ref().expect("chart present until drop")
    }
}

impl<F> DerefMut for PooledChart<F> {
    fn deref_mut(&mut self) -> &mut Chart<F> {
        self.chart.as_mut().expect("chart present until drop")
    }
}

impl<F> Drop for PooledChart<F> {
    fn drop(&mut self) {
        if let (Some(chart), Ok(mut free)) = (self.chart.take(), self.pool.lock()) {
            free.push(chart);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::Rule;

    #[test]
    fn charts_are_recycled() {
        let arena = ChartArena::<f64>::new(8);
        {
            let mut a = arena.take();
            let _b = arena.take();
            a.build(&[0.0; 16], 3, Rule::Max).unwrap();
        }
        assert_eq!(arena.available(), 2);
        let c = arena.take();
        assert_eq!(arena.available(), 1);
        drop(c);
    }
}
