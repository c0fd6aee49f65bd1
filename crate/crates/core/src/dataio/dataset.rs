use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::tensornet::Tensor;

/// Which part of the corpus a dataset holds. Trigger synthesis uses this to
/// keep embedding and verification source pools apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// A whole training corpus, before splitting.
    Full,
    Train,
    Validation,
    Finetune,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Full => "full",
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Finetune => "finetune",
            Partition::Test => "test",
        }
    }
}

/// Labelled images `N × H × W × channels` with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    partition: Partition,
}

impl Dataset {
    /// Builds a dataset, checking label range, pixel range and that every
    /// class has at least one example.
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
        partition: Partition,
    ) -> Result<Self> {
        let ds = Self::unchecked(name, images, labels, classes, partition)?;
        ds.validate()?;
        Ok(ds)
    }

    fn unchecked(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
        partition: Partition,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(MixerError::Data(format!(
                "images must be N×H×W×C, got shape {:?}",
                images.shape()
            )));
        }
        if images.rows() != labels.len() {
            return Err(MixerError::Data(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(MixerError::Data("a dataset needs at least two classes".into()));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            classes,
            partition,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(MixerError::Data(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        if self.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MixerError::Data("pixel outside [0, 1]".into()));
        }
        let pools = self.class_pools();
        if let Some(empty) = pools.iter().position(|p| p.is_empty()) {
            return Err(MixerError::Data(format!("class {empty} has no examples")));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[H, W, channels]`
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    /// Indices of the examples of each class.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l < self.classes {
                pools[l].push(i);
            }
        }
        pools
    }

    /// Examples at `indices`, relabelled as `partition`. Small subsets may
    /// leave some class pools empty; consumers that need every class check
    /// for it themselves.
    pub fn subset(&self, indices: &[usize], partition: Partition) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(MixerError::Data(format!("index {bad} out of range")));
        }
        if indices.is_empty() {
            return Err(MixerError::Data("empty subset".into()));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::unchecked(
            format!("{}/{}", self.name, partition.name()),
            self.images.select_rows(indices),
            labels,
            self.classes,
            partition,
        )
    }

    /// One-hot targets `N × classes`.
    pub fn one_hot(&self) -> Tensor {
        let mut t = vec![0.0; self.len() * self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            t[i * self.classes + l] = 1.0;
        }
        Tensor::new(vec![self.len(), self.classes], t).expect("sized from labels")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = Tensor::new(vec![4, 1, 1, 1], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        Dataset::new("tiny", images, vec![0, 1, 0, 1], 2, Partition::Full).unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        let images = Tensor::new(vec![2, 1, 1, 1], vec![0.0, 1.5]).unwrap();
        assert!(Dataset::new("x", images.clone(), vec![0, 1], 2, Partition::Full).is_err());
        let images = Tensor::new(vec![2, 1, 1, 1], vec![0.0, 0.5]).unwrap();
        assert!(Dataset::new("x", images.clone(), vec![0, 2], 2, Partition::Full).is_err());
        assert!(Dataset::new("x", images, vec![0, 0], 2, Partition::Full).is_err());
    }

    #[test]
    fn pools_and_one_hot() {
        let d = tiny();
        assert_eq!(d.class_pools(), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(d.one_hot().row(1), &[0.0, 1.0]);
        let s = d.subset(&[3, 0], Partition::Test).unwrap();
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.partition(), Partition::Test);
    }
}
