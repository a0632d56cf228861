use std::collections::{BTreeSet, HashMap};

use super::ZooError;
use crate::acf::ChannelDelayCorrelationMatrix;
use crate::ingest::{Database, Label};
use crate::nn::Tensor;

/// One segment: a normalized correlation matrix per tower.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub recording_id: String,
    pub speaker_id: String,
    pub database: Database,
    pub label: Label,
    pub inputs: Vec<Vec<f32>>,
}

/// Examples sharing per-tower input shapes `[M², D+1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExampleSet {
    shapes: Vec<[usize; 2]>,
    examples: Vec<Example>,
}

impl ExampleSet {
    pub fn new(shapes: Vec<[usize; 2]>) -> Self {
        Self {
            shapes,
            examples: Vec::new(),
        }
    }

    pub fn shapes(&self) -> &[[usize; 2]] {
        &self.shapes
    }

    pub fn push(&mut self, example: Example) -> Result<(), ZooError> {
        if example.inputs.len() != self.shapes.len() {
            return Err(ZooError::Data(format!(
                "{}: {} inputs for {} towers",
                example.id,
                example.inputs.len(),
                self.shapes.len()
            )));
        }
        for (x, [r, c]) in example.inputs.iter().zip(&self.shapes) {
            if x.len() != r * c {
                return Err(ZooError::Data(format!(
                    "{}: input of {} values, expected {r}x{c}",
                    example.id,
                    x.len()
                )));
            }
        }
        self.examples.push(example);
        Ok(())
    }

    /// Builds an example from per-tower matrices.
    pub fn push_matrices(
        &mut self,
        meta: Example,
        matrices: &[&ChannelDelayCorrelationMatrix],
    ) -> Result<(), ZooError> {
        let inputs = matrices
            .iter()
            .map(|m| m.data().iter().map(|&v| v as f32).collect())
            .collect();
        self.push(Example { inputs, ..meta })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    pub fn speakers(&self) -> BTreeSet<String> {
        self.examples.iter().map(|e| e.speaker_id.clone()).collect()
    }

    /// Per-tower tensors `[B, M², D+1, 1]` for the given rows.
    pub fn batch(&self, rows: &[usize]) -> Vec<Tensor<f32>> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(t, &[r, c])| {
                let mut data = Vec::with_capacity(rows.len() * r * c);
                for &i in rows {
                    data.extend_from_slice(&self.examples[i].inputs[t]);
                }
                Tensor::from_vec(&[rows.len(), r, c, 1], data).expect("validated on push")
            })
            .collect()
    }

    /// Keeps only the listed towers, in the given order.
    pub fn select_towers(&self, towers: &[usize]) -> Result<ExampleSet, ZooError> {
        if let Some(&t) = towers.iter().find(|&&t| t >= self.shapes.len()) {
            return Err(ZooError::Data(format!("no tower {t}")));
        }
        Ok(ExampleSet {
            shapes: towers.iter().map(|&t| self.shapes[t]).collect(),
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    inputs: towers.iter().map(|&t| e.inputs[t].clone()).collect(),
                    ..e.clone()
                })
                .collect(),
        })
    }

    pub fn by_database(&self) -> HashMap<Database, Vec<usize>> {
        let mut out: HashMap<Database, Vec<usize>> = HashMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            out.entry(e.database).or_default().push(i);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, n: usize) -> Example {
        Example {
            id: id.into(),
            recording_id: "r".into(),
            speaker_id: "s".into(),
            database: Database::Synth,
            label: Label::Depressed,
            inputs: vec![(0..n).map(|v| v as f32).collect()],
        }
    }

    #[test]
    fn batches_stack_examples() {
        let mut set = ExampleSet::new(vec![[2, 3]]);
        set.push(ex("a", 6)).unwrap();
        set.push(ex("b", 6)).unwrap();
        assert!(set.push(ex("c", 5)).is_err());
        let b = set.batch(&[1, 0, 1]);
        assert_eq!(b[0].shape(), &[3, 2, 3, 1]);
        assert_eq!(&b[0].data()[6..9], &[0.0, 1.0, 2.0]);
    }
}
