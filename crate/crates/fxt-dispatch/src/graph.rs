//! Undirected communication graphs, Laplacian spectra, and the switching
//! signal that selects the active topology over time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected 0/1 communication graph on `n` nodes.
///
/// The adjacency matrix is symmetric with zero diagonal. Construction goes
/// through [`Topology::from_edges`], which enforces both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

/// On-disk form: `{ "n": 3, "edges": [[0,1],[1,2]] }` (0-indexed).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<TopologyFile> for Topology {
    type Error = Error;
    fn try_from(f: TopologyFile) -> Result<Self> {
        Topology::from_edges(f.n, &f.edges)
    }
}

impl From<Topology> for TopologyFile {
    fn from(t: Topology) -> Self {
        TopologyFile {
            n: t.n,
            edges: t.edges,
        }
    }
}

impl Topology {
    /// Builds a topology from an edge list. Duplicate edges collapse to one;
    /// self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("topology must have n >= 1".into()));
        }
        let mut adj = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge ({i},{j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-loop at node {i}")));
            }
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
        let mut canon = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if adj[i * n + j] {
                    neighbors[i].push(j);
                    if i < j {
                        canon.push((i, j));
                    }
                }
            }
        }
        Ok(Topology {
            n,
            edges: canon,
            neighbors,
        })
    }

    /// Complete graph K_n.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Topology::from_edges(n, &edges).expect("complete graph is always valid")
    }

    /// Path graph 0-1-...-(n-1).
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Topology::from_edges(n, &edges).expect("path graph is always valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Sorted (i, j) pairs with i < j.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn adjacency(&self, i: usize, j: usize) -> f64 {
        if i != j && self.neighbors[i].binary_search(&j).is_ok() {
            1.0
        } else {
            0.0
        }
    }
}

/// Graph Laplacian: l_ii = degree(i), l_ij = -a_ij. Row sums are zero.
pub fn laplacian(topology: &Topology) -> Vec<Vec<f64>> {
    let n = topology.node_count();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        l[i][i] = topology.degree(i) as f64;
        for &j in topology.neighbors(i) {
            l[i][j] = -1.0;
        }
    }
    l
}

/// Eigenvalues of a Laplacian, with the quantities the protocols consume.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Positive eigenvalues deduplicated at absolute tolerance 1e-9.
    pub distinct_nonzero: Vec<f64>,
    /// Second-smallest eigenvalue (algebraic connectivity).
    pub lambda2: f64,
}

/// Merge tolerance for near-duplicate eigenvalues. Downstream step gains
/// divide by these values, so near-duplicates are collapsed.
pub const EIGEN_DEDUP_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;

/// Eigen-decomposes a symmetric matrix and classifies the spectrum.
pub fn spectrum(matrix: &[Vec<f64>]) -> Result<Spectrum> {
    let n = matrix.len();
    let mut max_asym: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            max_asym = max_asym.max((matrix[i][j] - matrix[j][i]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(Error::NonSymmetric {
            max_asymmetry: max_asym,
        });
    }
    let (eigenvalues, _) = jacobi_eigen(matrix);
    let mut distinct_nonzero: Vec<f64> = Vec::new();
    for &ev in &eigenvalues {
        if ev > EIGEN_DEDUP_TOL {
            match distinct_nonzero.last() {
                Some(&last) if (ev - last).abs() <= EIGEN_DEDUP_TOL => {}
                _ => distinct_nonzero.push(ev),
            }
        }
    }
    let lambda2 = if n >= 2 { eigenvalues[1] } else { 0.0 };
    Ok(Spectrum {
        eigenvalues,
        distinct_nonzero,
        lambda2,
    })
}

/// Cyclic Jacobi eigensolver for symmetric matrices. Returns eigenvalues
/// ascending and the matching orthonormal eigenvectors as columns.
///
/// Sweeps rotate away every off-diagonal entry; iteration stops when the
/// off-diagonal Frobenius norm drops below 1e-12. Graphs here are small
/// (n <= ~60), so this converges within a handful of sweeps.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut q = vec![vec![0.0; n]; n];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let off = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= 1e-12 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = a[p][r];
                if apr.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[r][r] - a[p][p]) / (2.0 * apr);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akr = a[k][r];
                    a[k][p] = c * akp - s * akr;
                    a[k][r] = s * akp + c * akr;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let ark = a[r][k];
                    a[p][k] = c * apk - s * ark;
                    a[r][k] = s * apk + c * ark;
                }
                for k in 0..n {
                    let qkp = q[k][p];
                    let qkr = q[k][r];
                    q[k][p] = c * qkp - s * qkr;
                    q[k][r] = s * qkp + c * qkr;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut vectors = vec![vec![0.0; n]; n];
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k][col] = q[k][src];
        }
    }
    (eigenvalues, vectors)
}

/// Breadth-first reachability from node 0. Agrees with `lambda2 > 1e-9`.
pub fn is_connected(topology: &Topology) -> bool {
    let n = topology.node_count();
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for &j in topology.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Piecewise-constant topology switching signal. Phase `k` is active on
/// `[start_times[k], start_times[k+1])`; the signal is right-continuous.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct TopologySchedule {
    topologies: Vec<Topology>,
    /// (start time, index into `topologies`)
    phases: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleFile {
    topologies: Vec<Topology>,
    phases: Vec<PhaseFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhaseFile {
    t: f64,
    topology: usize,
}

impl TryFrom<ScheduleFile> for TopologySchedule {
    type Error = Error;
    fn try_from(f: ScheduleFile) -> Result<Self> {
        TopologySchedule::new(
            f.topologies,
            f.phases.into_iter().map(|p| (p.t, p.topology)).collect(),
        )
    }
}

impl From<TopologySchedule> for ScheduleFile {
    fn from(s: TopologySchedule) -> Self {
        ScheduleFile {
            topologies: s.topologies,
            phases: s
                .phases
                .into_iter()
                .map(|(t, topology)| PhaseFile { t, topology })
                .collect(),
        }
    }
}

impl TopologySchedule {
    pub fn new(topologies: Vec<Topology>, phases: Vec<(f64, usize)>) -> Result<Self> {
        if topologies.is_empty() || phases.is_empty() {
            return Err(Error::Validation(
                "schedule needs at least one topology and one phase".into(),
            ));
        }
        let n = topologies[0].node_count();
        for (idx, topo) in topologies.iter().enumerate() {
            if topo.node_count() != n {
                return Err(Error::Validation(format!(
                    "topology {idx} has {} nodes, expected {n}",
                    topo.node_count()
                )));
            }
            if !is_connected(topo) {
                return Err(Error::DisconnectedTopology { index: idx });
            }
        }
        if phases[0].0 != 0.0 {
            return Err(Error::Validation("first phase must start at t = 0".into()));
        }
        for w in phases.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Validation(
                    "phase start times must be strictly increasing".into(),
                ));
            }
        }
        for &(t, idx) in &phases {
            if idx >= topologies.len() {
                return Err(Error::Validation(format!(
                    "phase at t = {t} references missing topology {idx}"
                )));
            }
        }
        Ok(TopologySchedule { topologies, phases })
    }

    /// Single static topology, active for all time.
    pub fn static_topology(topology: Topology) -> Result<Self> {
        TopologySchedule::new(vec![topology], vec![(0.0, 0)])
    }

    pub fn node_count(&self) -> usize {
        self.topologies[0].node_count()
    }

    pub fn topologies(&self) -> &[Topology] {
        &self.topologies
    }

    pub fn phases(&self) -> &[(f64, usize)] {
        &self.phases
    }

    pub fn is_static(&self) -> bool {
        self.phases.len() == 1
    }

    /// Largest node degree over all phases; bounds the Laplacian spectral
    /// radius by 2*max_degree.
    pub fn max_degree(&self) -> usize {
        self.topologies
            .iter()
            .map(|t| t.max_degree())
            .max()
            .unwrap_or(0)
    }

    /// Topology active at time `t` (right-continuous at switch instants;
    /// the last phase persists beyond the final switch).
    pub fn active_topology(&self, t: f64) -> &Topology {
        let pos = self.phases.partition_point(|&(start, _)| start <= t);
        let idx = if pos == 0 { 0 } else { pos - 1 };
        &self.topologies[self.phases[idx].1]
    }

    /// Index (into `phases`) of the phase active at time `t`.
    pub fn active_phase(&self, t: f64) -> usize {
        let pos = self.phases.partition_point(|&(start, _)| start <= t);
        pos.saturating_sub(1)
    }
}

/// Minimum algebraic connectivity over every phase of the schedule.
///
/// This is the worst-case Laplacian eigenvalue that enters the settling-time
/// coefficients under switching.
pub fn lambda2_star(schedule: &TopologySchedule) -> Result<f64> {
    let mut min_l2 = f64::INFINITY;
    for (idx, topo) in schedule.topologies().iter().enumerate() {
        if !is_connected(topo) {
            return Err(Error::DisconnectedTopology { index: idx });
        }
        let spec = spectrum(&laplacian(topo))?;
        min_l2 = min_l2.min(spec.lambda2);
    }
    Ok(min_l2)
}

/// Erdős–Rényi graph, resampled until connected. Deterministic per RNG state.
pub fn random_connected<R: Rng>(n: usize, rng: &mut R) -> Topology {
    assert!(n >= 1);
    if n == 1 {
        return Topology::from_edges(1, &[]).unwrap();
    }
    let p_edge = (1.5 * (n as f64).ln() / n as f64).clamp(0.3, 1.0);
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p_edge {
                    edges.push((i, j));
                }
            }
        }
        let topo = Topology::from_edges(n, &edges).unwrap();
        if is_connected(&topo) {
            return topo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k3() -> Topology {
        Topology::complete(3)
    }

    #[test]
    fn laplacian_single_edge() {
        let t = Topology::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(laplacian(&t), vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_complete_k3() {
        let l = laplacian(&k3());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { -1.0 };
                assert_eq!(l[i][j], expect);
            }
        }
    }

    #[test]
    fn laplacian_empty_graph_is_zero() {
        let t = Topology::from_edges(3, &[]).unwrap();
        assert_eq!(laplacian(&t), vec![vec![0.0; 3]; 3]);
    }

    #[test]
    fn spectrum_k3() {
        let s = spectrum(&laplacian(&k3())).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-9);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-9);
        assert!((s.eigenvalues[2] - 3.0).abs() < 1e-9);
        assert_eq!(s.distinct_nonzero.len(), 1);
        assert!((s.distinct_nonzero[0] - 3.0).abs() < 1e-9);
        assert!((s.lambda2 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_path3() {
        // characteristic polynomial lambda*(lambda-1)*(lambda-3)
        let s = spectrum(&laplacian(&Topology::path(3))).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-9);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-9);
        assert!((s.eigenvalues[2] - 3.0).abs() < 1e-9);
        assert!((s.lambda2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_single_edge() {
        let t = Topology::from_edges(2, &[(0, 1)]).unwrap();
        let s = spectrum(&laplacian(&t)).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-9);
        assert!((s.eigenvalues[1] - 2.0).abs() < 1e-9);
        assert!((s.lambda2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_rejects_asymmetry() {
        let m = vec![vec![1.0, 2.0], vec![0.5, 1.0]];
        match spectrum(&m) {
            Err(Error::NonSymmetric { max_asymmetry }) => assert!((max_asymmetry - 1.5).abs() < 1e-12),
            other => panic!("expected NonSymmetric, got {other:?}"),
        }
    }

    #[test]
    fn connectivity_checks() {
        assert!(is_connected(&k3()));
        let disjoint = Topology::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(!is_connected(&disjoint));
        let single = Topology::from_edges(1, &[]).unwrap();
        assert!(is_connected(&single));
    }

    #[test]
    fn lambda2_star_of_schedules() {
        let sched = TopologySchedule::static_topology(k3()).unwrap();
        assert!((lambda2_star(&sched).unwrap() - 3.0).abs() < 1e-9);

        let sched = TopologySchedule::new(vec![k3(), Topology::path(3)], vec![(0.0, 0), (1.0, 1)])
            .unwrap();
        assert!((lambda2_star(&sched).unwrap() - 1.0).abs() < 1e-9);

        // a disconnected phase is rejected at construction
        let disjoint = Topology::from_edges(3, &[(0, 1)]).unwrap();
        match TopologySchedule::new(vec![k3(), disjoint], vec![(0.0, 0), (1.0, 1)]) {
            Err(Error::DisconnectedTopology { index }) => assert_eq!(index, 1),
            other => panic!("expected DisconnectedTopology, got {other:?}"),
        }
    }

    #[test]
    fn active_topology_is_right_continuous() {
        let a = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let b = k3();
        let sched =
            TopologySchedule::new(vec![a.clone(), b.clone()], vec![(0.0, 0), (1.0, 1)]).unwrap();
        assert_eq!(sched.active_topology(0.5).edges(), a.edges());
        assert_eq!(sched.active_topology(1.0).edges(), b.edges());
        assert_eq!(sched.active_topology(100.0).edges(), b.edges());
    }

    #[test]
    fn laplacian_row_sums_and_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(2..=10usize);
            let topo = random_connected(n, &mut rng);
            let l = laplacian(&topo);
            for row in &l {
                assert_eq!(row.iter().sum::<f64>(), 0.0);
            }
            for _ in 0..5 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
                let mut quad = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        quad += x[i] * l[i][j] * x[j];
                    }
                }
                let mut pair = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        pair += topo.adjacency(i, j) * (x[j] - x[i]).powi(2);
                    }
                }
                assert!((quad - 0.5 * pair).abs() <= 1e-10 * (1.0 + quad.abs()));
            }
        }
    }

    #[test]
    fn eigendecomposition_reconstructs_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.random_range(2..=8usize);
            let topo = random_connected(n, &mut rng);
            let l = laplacian(&topo);
            let (vals, vecs) = jacobi_eigen(&l);
            let mut max_err: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut rec = 0.0;
                    for k in 0..n {
                        rec += vecs[i][k] * vals[k] * vecs[j][k];
                    }
                    max_err = max_err.max((l[i][j] - rec).abs());
                }
            }
            assert!(max_err <= 1e-8, "reconstruction residual {max_err}");
        }
    }

    #[test]
    fn connectivity_agrees_with_lambda2() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let n = rng.random_range(1..=10usize);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < 0.3 {
                        edges.push((i, j));
                    }
                }
            }
            let topo = Topology::from_edges(n, &edges).unwrap();
            if n == 1 {
                assert!(is_connected(&topo));
                continue;
            }
            let spec = spectrum(&laplacian(&topo)).unwrap();
            assert_eq!(is_connected(&topo), spec.lambda2 > 1e-9);
        }
    }

    proptest::proptest! {
        /// x' L x = 0.5 * sum a_ij (x_j - x_i)^2 for arbitrary graphs and
        /// vectors, and row sums vanish.
        #[test]
        fn laplacian_quadratic_form_identity(
            n in 2usize..8,
            mask in proptest::collection::vec(proptest::bool::ANY, 28),
            xs in proptest::collection::vec(-100.0f64..100.0, 8),
        ) {
            let mut edges = Vec::new();
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask[idx % mask.len()] {
                        edges.push((i, j));
                    }
                    idx += 1;
                }
            }
            let topo = Topology::from_edges(n, &edges).unwrap();
            let l = laplacian(&topo);
            for row in &l {
                proptest::prop_assert_eq!(row.iter().sum::<f64>(), 0.0);
            }
            let x = &xs[..n];
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += x[i] * l[i][j] * x[j];
                }
            }
            let mut pair = 0.0;
            for i in 0..n {
                for j in 0..n {
                    pair += topo.adjacency(i, j) * (x[j] - x[i]).powi(2);
                }
            }
            proptest::prop_assert!((quad - 0.5 * pair).abs() <= 1e-9 * (1.0 + quad.abs()));
        }
    }

    #[test]
    fn topology_json_round_trip() {
        let topo = Topology::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let json = serde_json::to_string(&topo).unwrap();
        let back: Topology = serde_json::from_str(&json).unwrap();
        assert_eq!(topo, back);
    }
}
