use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Changes in the factor-driven component.
    Factor,
    /// Changes in the idiosyncratic VAR component.
    Var,
}

/// One change-point estimate together with the scan that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub location: usize,
    #[serde(rename = "G")]
    pub bandwidth: usize,
    pub stat: f64,
    pub stage: Stage,
}

/// Change-point estimates kept sorted by location.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChangePointSet {
    points: Vec<ChangePoint>,
}

impl ChangePointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(mut points: Vec<ChangePoint>) -> Self {
        points.sort_by_key(|c| c.location);
        Self { points }
    }

    /// Inserts keeping the set sorted; equal locations go after existing ones.
    pub fn insert(&mut self, point: ChangePoint) {
        let idx = self.points.partition_point(|c| c.location <= point.location);
        self.points.insert(idx, point);
    }

    pub fn points(&self) -> &[ChangePoint] {
        &self.points
    }

    pub fn locations(&self) -> Vec<usize> {
        self.points.iter().map(|c| c.location).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
