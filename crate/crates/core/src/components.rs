//! Object instances from a labeled mesh: drop `Unknown`, split into
//! connected components, filter by per-class triangle counts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{ClassSet, SemanticMesh};
use crate::ply::{self, PlyError, PlyFormat, WriteOptions};

pub const DEFAULT_BATCH_SIZE: u32 = 5;

#[derive(Debug, Error)]
pub enum ComponentError {
    #[error("{labels} labels for {vertices} vertices")]
    LabelCount { labels: usize, vertices: usize },
    #[error("no triangle threshold configured for class `{0}`")]
    MissingThreshold(String),
    #[error("bad threshold spec `{0}` (expected e.g. chair=30,lamp=5)")]
    BadThresholdSpec(String),
    #[error(transparent)]
    Ply(#[from] PlyError),
}

/// Connected, single-class piece of the mesh with its own vertex indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledComponent {
    /// Position of the component within its batch.
    pub id: u32,
    pub class_index: u8,
    pub class_name: String,
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Original mesh index of each component vertex.
    pub source_vertices: Vec<u32>,
}

impl LabeledComponent {
    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum = self
            .vertices
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, v| acc + v.coords);
        Point3::from(sum / self.vertices.len().max(1) as f64)
    }

    /// As a labeled mesh over `classes`, every vertex carrying the
    /// component's class.
    pub fn to_mesh(&self, classes: &ClassSet) -> SemanticMesh {
        SemanticMesh::new(self.vertices.clone(), self.triangles.clone(), classes.len())
            .and_then(|m| m.with_labels(vec![self.class_index; self.vertices.len()], classes))
            .expect("component indices are valid by construction")
    }

    pub fn file_name(&self) -> String {
        format!("component_{}_{}.ply", self.id, self.class_name)
    }
}

/// Minimum triangle counts per class; a component survives only with
/// strictly more triangles than its class threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdTable {
    thresholds: BTreeMap<String, usize>,
}

impl ThresholdTable {
    pub fn new() -> Self {
        Self {
            thresholds: BTreeMap::new(),
        }
    }

    pub fn with(mut self, class: &str, min_triangles: usize) -> Self {
        self.set(class, min_triangles);
        self
    }

    pub fn set(&mut self, class: &str, min_triangles: usize) {
        self.thresholds.insert(class.to_ascii_lowercase(), min_triangles);
    }

    pub fn get(&self, class: &str) -> Option<usize> {
        self.thresholds.get(&class.to_ascii_lowercase()).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.thresholds.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl Default for ThresholdTable {
    /// Chair > 30 triangles, Lamp > 5 triangles.
    fn default() -> Self {
        Self::new().with("Chair", 30).with("Lamp", 5)
    }
}

impl FromStr for ThresholdTable {
    type Err = ComponentError;

    /// Parses `chair=30,lamp=5`. Class names are case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut table = Self::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| ComponentError::BadThresholdSpec(s.to_string()))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| ComponentError::BadThresholdSpec(s.to_string()))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(ComponentError::BadThresholdSpec(s.to_string()));
            }
            table.set(name, value);
        }
        Ok(table)
    }
}

impl fmt::Display for ThresholdTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// Splits the non-`Unknown` part of the mesh into vertex-connected,
/// single-class components.
///
/// Only triangles whose three vertices carry the same non-`Unknown` label are
/// kept. Components are ordered by their smallest original vertex index and
/// numbered from 0 in that order.
pub fn extract_components(
    mesh: &SemanticMesh,
    labels: &[u8],
    classes: &ClassSet,
) -> Result<Vec<LabeledComponent>, ComponentError> {
    if labels.len() != mesh.vertices().len() {
        return Err(ComponentError::LabelCount {
            labels: labels.len(),
            vertices: mesh.vertices().len(),
        });
    }
    let unknown = classes.unknown_index() as u8;
    let kept: Vec<usize> = mesh
        .triangles()
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            let l = labels[t[0] as usize];
            l != unknown && labels[t[1] as usize] == l && labels[t[2] as usize] == l
        })
        .map(|(i, _)| i)
        .collect();

    let mut sets = DisjointSet::new(mesh.vertices().len());
    for &t in &kept {
        let [a, b, c] = mesh.triangles()[t];
        sets.union(a, b);
        sets.union(a, c);
    }

    // Group triangles by root; BTreeMap keyed by the smallest vertex gives
    // the output order directly.
    let mut smallest: BTreeMap<u32, u32> = BTreeMap::new();
    for &t in &kept {
        let tri = mesh.triangles()[t];
        let root = sets.find(tri[0]);
        let min = *tri.iter().min().expect("three corners");
        smallest.entry(root).and_modify(|m| *m = (*m).min(min)).or_insert(min);
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &t in &kept {
        let root = sets.find(mesh.triangles()[t][0]);
        groups.entry(smallest[&root]).or_default().push(t);
    }

    let mut out = Vec::with_capacity(groups.len());
    for (id, triangles) in groups.into_values().enumerate() {
        let mut source: Vec<u32> = triangles.iter().flat_map(|&t| mesh.triangles()[t]).collect();
        source.sort_unstable();
        source.dedup();
        let local: BTreeMap<u32, u32> = source.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let class_index = labels[source[0] as usize];
        out.push(LabeledComponent {
            id: id as u32,
            class_index,
            class_name: classes.name(class_index as usize).unwrap_or("?").to_string(),
            vertices: source.iter().map(|&v| mesh.vertices()[v as usize]).collect(),
            triangles: triangles
                .iter()
                .map(|&t| mesh.triangles()[t].map(|v| local[&v]))
                .collect(),
            source_vertices: source,
        });
    }
    Ok(out)
}

/// Keeps components with strictly more triangles than their class threshold.
/// Surviving components are renumbered from 0.
pub fn filter_components(
    components: Vec<LabeledComponent>,
    thresholds: &ThresholdTable,
) -> Result<Vec<LabeledComponent>, ComponentError> {
    let mut out = Vec::new();
    for c in components {
        let min = thresholds
            .get(&c.class_name)
            .ok_or_else(|| ComponentError::MissingThreshold(c.class_name.clone()))?;
        if c.triangle_count() > min {
            out.push(c);
        }
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.id = i as u32;
    }
    Ok(out)
}

/// Whether enough frames have been fused since the last component batch.
pub fn batch_trigger(frames_since_last_send: u32, batch_size: u32) -> bool {
    frames_since_last_send >= batch_size
}

/// Writes each component to `dir/component_<id>_<class>.ply`.
pub fn write_component_plys(
    dir: &Path,
    components: &[LabeledComponent],
    classes: &ClassSet,
) -> Result<Vec<PathBuf>, ComponentError> {
    let mut paths = Vec::with_capacity(components.len());
    for c in components {
        let path = dir.join(c.file_name());
        let options = WriteOptions {
            format: PlyFormat::BinaryLittleEndian,
            labels: true,
            probabilities: None,
        };
        ply::write_path(&path, &c.to_mesh(classes), options)?;
        paths.push(path);
    }
    Ok(paths)
}
