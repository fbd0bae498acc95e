//! Historical gradient storage: a bounded FIFO of flattened gradients per layer.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradientHistoryBuffer {
    layer_index: usize,
    capacity: usize,
    xi: usize,
    entries: VecDeque<Vec<f64>>,
}

impl GradientHistoryBuffer {
    /// `xi` is the flattened gradient length, `capacity` the history length `l`.
    pub fn new(layer_index: usize, capacity: usize, xi: usize) -> Result<Self> {
        if capacity == 0 || xi == 0 {
            return Err(LabError::Contract(format!(
                "history buffer needs capacity >= 1 and xi >= 1 (got {capacity}, {xi})"
            )));
        }
        Ok(Self {
            layer_index,
            capacity,
            xi,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn xi(&self) -> usize {
        self.xi
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Appends `grad` flattened row-major, evicting the oldest entry when full.
    pub fn push(&mut self, grad: &Tensor) -> Result<()> {
        if grad.len() != self.xi {
            return Err(LabError::dim("GradientHistoryBuffer::push", grad.shape(), &[self.xi]));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(grad.data().to_vec());
        Ok(())
    }

    /// Concatenation of all entries, oldest first, as a `(xi·m)×1` column.
    pub fn window(&self) -> Result<Tensor> {
        if self.entries.is_empty() {
            return Err(LabError::EmptyHistory {
                layer: self.layer_index,
            });
        }
        let mut flat = Vec::with_capacity(self.xi * self.entries.len());
        for e in &self.entries {
            flat.extend_from_slice(e);
        }
        Tensor::new(vec![flat.len(), 1], flat)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// CSV dump: one row per stored step (oldest first), one column per
    /// flattened index.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.xi).map(|i| format!("g{i}")).collect();
        writeln!(out, "step,{}", header.join(","))?;
        for (s, e) in self.entries.iter().enumerate() {
            let row: Vec<String> = e.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{s},{}", row.join(","))?;
        }
        Ok(())
    }

    pub(crate) fn restore(&mut self, entries: Vec<Vec<f64>>) -> Result<()> {
        if entries.len() > self.capacity || entries.iter().any(|e| e.len() != self.xi) {
            return Err(LabError::Checkpoint(format!(
                "history for layer {} does not fit capacity {} / xi {}",
                self.layer_index, self.capacity, self.xi
            )));
        }
        self.entries = entries.into();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: f64) -> Tensor {
        Tensor::from_vec(vec![v, v + 0.5])
    }

    #[test]
    fn fifo_eviction() {
        let mut b = GradientHistoryBuffer::new(0, 3, 2).unwrap();
        for v in 1..=5 {
            b.push(&g(v as f64)).unwrap();
        }
        let firsts: Vec<f64> = b.entries().map(|e| e[0]).collect();
        assert_eq!(firsts, vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn single_push() {
        let mut b = GradientHistoryBuffer::new(0, 3, 2).unwrap();
        b.push(&g(1.0)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.window().unwrap().data(), &[1.0, 1.5]);
    }

    #[test]
    fn conv_gradient_flattening_order() {
        let grad = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut b = GradientHistoryBuffer::new(0, 1, 4).unwrap();
        b.push(&grad).unwrap();
        assert_eq!(b.window().unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn window_is_oldest_first() {
        let mut b = GradientHistoryBuffer::new(0, 4, 2).unwrap();
        b.push(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        b.push(&Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        let w = b.window().unwrap();
        assert_eq!(w.shape(), &[4, 1]);
        assert_eq!(w.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_window_errors() {
        let b = GradientHistoryBuffer::new(2, 3, 2).unwrap();
        assert!(matches!(b.window(), Err(LabError::EmptyHistory { layer: 2 })));
    }

    #[test]
    fn wrong_length_rejected() {
        let mut b = GradientHistoryBuffer::new(0, 3, 4).unwrap();
        assert!(matches!(
            b.push(&Tensor::zeros(&[3])),
            Err(LabError::Dimension { .. })
        ));
    }

    #[test]
    fn csv_dump_rows() {
        let mut b = GradientHistoryBuffer::new(0, 2, 2).unwrap();
        b.push(&g(1.0)).unwrap();
        b.push(&g(2.0)).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("step,g0,g1\n"));
    }
}
