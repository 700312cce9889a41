//! Classification reward: one point per correctly classified image.

use crate::error::{Error, Result};
use crate::evolution::FitnessFn;
use crate::model::{unpack, ArchitectureSpec, CnnModel, Genome};
use crate::tensor::{argmax, Tensor};

/// Images with class labels, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    split_name: String,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        split_name: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape("dataset labels", images.len(), labels.len()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::shape(
                format!("label of item {i}"),
                format!("< {num_classes}"),
                l,
            ));
        }
        if let Some(first) = images.first() {
            if let Some((i, img)) = images.iter().enumerate().find(|(_, t)| t.shape() != first.shape()) {
                return Err(Error::shape(
                    format!("image {i}"),
                    format!("{:?}", first.shape()),
                    format!("{:?}", img.shape()),
                ));
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            split_name: split_name.into(),
            num_classes,
        })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Number of items of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn check_against(&self, spec: &ArchitectureSpec) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.num_classes != spec.num_classes {
            return Err(Error::shape(
                format!("{} split classes", self.split_name),
                spec.num_classes,
                self.num_classes,
            ));
        }
        let shape = self.images[0].shape();
        if shape != spec.input_shape {
            return Err(Error::shape(
                format!("{} split image shape", self.split_name),
                format!("{:?}", spec.input_shape),
                format!("{shape:?}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitnessResult {
    pub reward: usize,
    pub total: usize,
    pub per_class_correct: Vec<usize>,
}

/// Predicted class of every item, in dataset order.
pub fn predict(model: &CnnModel, dataset: &LabeledDataset) -> Result<Vec<usize>> {
    dataset
        .images
        .iter()
        .map(|img| argmax(&model.forward(img)?))
        .collect()
}

pub fn evaluate_model(model: &CnnModel, dataset: &LabeledDataset) -> Result<FitnessResult> {
    dataset.check_against(model.spec())?;
    let mut per_class_correct = vec![0; dataset.num_classes];
    for (img, label) in dataset.iter() {
        if argmax(&model.forward(img)?)? == label {
            per_class_correct[label] += 1;
        }
    }
    Ok(FitnessResult {
        reward: per_class_correct.iter().sum(),
        total: dataset.len(),
        per_class_correct,
    })
}

/// Count of images whose top-scoring class equals the label.
pub fn evaluate_fitness(genome: &Genome, spec: &ArchitectureSpec, dataset: &LabeledDataset) -> Result<FitnessResult> {
    dataset.check_against(spec)?;
    evaluate_model(&unpack(genome, spec)?, dataset)
}

pub fn accuracy(result: &FitnessResult) -> Result<f64> {
    if result.total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(result.reward as f64 / result.total as f64)
}

/// `matrix[label][predicted]` counts.
pub fn confusion_matrix(model: &CnnModel, dataset: &LabeledDataset) -> Result<Vec<Vec<usize>>> {
    dataset.check_against(model.spec())?;
    let n = dataset.num_classes;
    let mut matrix = vec![vec![0; n]; n];
    for (pred, &label) in predict(model, dataset)?.into_iter().zip(&dataset.labels) {
        matrix[label][pred] += 1;
    }
    Ok(matrix)
}

/// Training reward and held-out accuracy against fixed splits.
#[derive(Debug, Clone)]
pub struct DatasetFitness<'a> {
    spec: &'a ArchitectureSpec,
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
}

impl<'a> DatasetFitness<'a> {
    pub fn new(spec: &'a ArchitectureSpec, train: &'a LabeledDataset, test: Option<&'a LabeledDataset>) -> Result<Self> {
        train.check_against(spec)?;
        if let Some(test) = test {
            test.check_against(spec)?;
        }
        Ok(DatasetFitness { spec, train, test })
    }
}

impl FitnessFn for DatasetFitness<'_> {
    fn reward(&self, genome: &Genome) -> Result<usize> {
        Ok(evaluate_model(&unpack(genome, self.spec)?, self.train)?.reward)
    }

    fn max_reward(&self) -> Option<usize> {
        Some(self.train.len())
    }

    fn test_accuracy(&self, genome: &Genome) -> Result<Option<f64>> {
        match self.test {
            Some(test) => Ok(Some(accuracy(&evaluate_model(&unpack(genome, self.spec)?, test)?)?)),
            None => Ok(None),
        }
    }
}
