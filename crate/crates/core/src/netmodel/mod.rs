//! Radial network data model and the matrix operators of the power-flow equations.
//!
//! Bus and line indices are zero-based throughout the crate; bus index 0 is the
//! feeder. [`Bus::id`] carries the one-based id used in documents and reports.
//! Buses are renumbered breadth-first from the feeder on load, so every line is
//! stored parent-first and a parent always has a smaller index than its child.

mod format;

pub use format::{BusRecord, LineRecord, NetworkDocument, FORMAT_VERSION};

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::sdpcore::HermitianMatrix;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("cannot parse network document: {0}")]
    Parse(String),
    #[error("unsupported network format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("network has no buses")]
    Empty,
    #[error("duplicate bus id {0}")]
    DuplicateBus(u64),
    #[error("line {line} references unknown bus {bus}")]
    UnknownBus { line: usize, bus: u64 },
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: u64 },
    #[error("duplicate line between buses {0} and {1}")]
    DuplicateLine(u64, u64),
    #[error("line {line} ({from}-{to}) requires b > g > 0, got g={g}, b={b}")]
    Admittance { line: usize, from: u64, to: u64, g: f64, b: f64 },
    #[error("line {line} ({from}-{to}) has a non-positive {what} limit")]
    Limit { line: usize, from: u64, to: u64, what: &'static str },
    #[error("cycle detected through line {line} ({from}-{to})")]
    Cycle { line: usize, from: u64, to: u64 },
    #[error("disconnected graph: bus {0} is unreachable from the feeder")]
    Disconnected(u64),
    #[error("bus {bus}: {what}")]
    Bounds { bus: u64, what: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// One-based id after normalization.
    pub id: usize,
    /// Id as written in the source document.
    pub label: u64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_ref: f64,
    pub shunt_b: f64,
    pub v_max: Option<f64>,
}

/// Line stored parent-first. `p_flow_max` and `loss_max` are `f64::INFINITY`
/// when unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub p_flow_max: f64,
    pub loss_max: f64,
}

impl Line {
    /// Series admittance under the `g - j b` convention.
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.g, -self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTree {
    pub name: Option<String>,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Line index feeding each non-root bus.
    parent_line: Vec<Option<usize>>,
}

/// Which operator matrix to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    /// `(A_i, B_i)`: active and reactive injection at a bus.
    Injection(usize),
    /// `A_ik`: active flow leaving `i` towards `k`.
    LineFlow(usize, usize),
    /// `G_ik = A_ik + A_ki`: line loss.
    LineLoss(usize, usize),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("buses {0} and {1} are not connected by a line")]
pub struct NotALine(pub usize, pub usize);

impl NetworkTree {
    pub fn from_document(doc: NetworkDocument) -> Result<Self, NetworkError> {
        if doc.version != FORMAT_VERSION {
            return Err(NetworkError::Version(doc.version));
        }
        if doc.buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut by_label: BTreeMap<u64, usize> = BTreeMap::new();
        for (pos, b) in doc.buses.iter().enumerate() {
            if by_label.insert(b.id, pos).is_some() {
                return Err(NetworkError::DuplicateBus(b.id));
            }
            validate_bus(b)?;
        }

        let n = doc.buses.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut seen_pairs = BTreeMap::new();
        for (li, l) in doc.lines.iter().enumerate() {
            let a = *by_label.get(&l.from).ok_or(NetworkError::UnknownBus { line: li, bus: l.from })?;
            let c = *by_label.get(&l.to).ok_or(NetworkError::UnknownBus { line: li, bus: l.to })?;
            if a == c {
                return Err(NetworkError::SelfLoop { line: li, bus: l.from });
            }
            let key = (a.min(c), a.max(c));
            if seen_pairs.insert(key, li).is_some() {
                return Err(NetworkError::DuplicateLine(l.from, l.to));
            }
            if !(l.g > 0.0 && l.b > l.g) || !l.g.is_finite() || !l.b.is_finite() {
                return Err(NetworkError::Admittance { line: li, from: l.from, to: l.to, g: l.g, b: l.b });
            }
            for (what, v) in [("flow", l.p_flow_max), ("loss", l.loss_max)] {
                if let Some(v) = v {
                    if !(v > 0.0) {
                        return Err(NetworkError::Limit { line: li, from: l.from, to: l.to, what });
                    }
                }
            }
            adj[a].push((c, li));
            adj[c].push((a, li));
        }

        // Feeder: the bus labelled 1, else the first listed bus.
        let root = by_label.get(&1).copied().unwrap_or(0);
        let mut order = Vec::with_capacity(n);
        let mut visited = vec![false; n];
        let mut via_line: Vec<Option<usize>> = vec![None; n];
        let mut parent_pos: Vec<Option<usize>> = vec![None; n];
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<(usize, usize)> = adj[u].clone();
            next.sort_by_key(|&(v, _)| doc.buses[v].id);
            for (v, li) in next {
                if Some(li) == via_line[u] {
                    continue;
                }
                if visited[v] {
                    let l = &doc.lines[li];
                    return Err(NetworkError::Cycle { line: li, from: l.from, to: l.to });
                }
                visited[v] = true;
                via_line[v] = Some(li);
                parent_pos[v] = Some(u);
                queue.push_back(v);
            }
        }
        if let Some(pos) = visited.iter().position(|v| !v) {
            return Err(NetworkError::Disconnected(doc.buses[pos].id));
        }

        let mut new_index = vec![0usize; n];
        for (idx, &pos) in order.iter().enumerate() {
            new_index[pos] = idx;
        }
        let buses: Vec<Bus> = order
            .iter()
            .enumerate()
            .map(|(idx, &pos)| {
                let r = &doc.buses[pos];
                Bus {
                    id: idx + 1,
                    label: r.id,
                    p_min: r.p_min,
                    p_max: r.p_max,
                    q_min: r.q_min,
                    q_max: r.q_max,
                    v_ref: r.v_ref.unwrap_or(1.0),
                    shunt_b: r.shunt_b.unwrap_or(0.0),
                    v_max: r.v_max,
                }
            })
            .collect();

        let mut lines = Vec::with_capacity(n - 1);
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut parent_line = vec![None; n];
        for &pos in order.iter().skip(1) {
            let li = via_line[pos].expect("non-root bus reached through a line");
            let rec = &doc.lines[li];
            let p = new_index[parent_pos[pos].expect("non-root bus has a parent")];
            let c = new_index[pos];
            parent[c] = Some(p);
            children[p].push(c);
            parent_line[c] = Some(lines.len());
            lines.push(Line {
                from: p,
                to: c,
                g: rec.g,
                b: rec.b,
                p_flow_max: rec.p_flow_max.unwrap_or(f64::INFINITY),
                loss_max: rec.loss_max.unwrap_or(f64::INFINITY),
            });
        }

        Ok(Self { name: doc.name, buses, lines, parent, children, parent_line })
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            version: FORMAT_VERSION,
            name: self.name.clone(),
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id as u64,
                    p_min: b.p_min,
                    p_max: b.p_max,
                    q_min: b.q_min,
                    q_max: b.q_max,
                    v_ref: (b.v_ref != 1.0).then_some(b.v_ref),
                    shunt_b: (b.shunt_b != 0.0).then_some(b.shunt_b),
                    v_max: b.v_max,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: (l.from + 1) as u64,
                    to: (l.to + 1) as u64,
                    g: l.g,
                    b: l.b,
                    p_flow_max: l.p_flow_max.is_finite().then_some(l.p_flow_max),
                    loss_max: l.loss_max.is_finite().then_some(l.loss_max),
                })
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus(&self, i: usize) -> &Bus {
        &self.buses[i]
    }

    pub fn bus_mut(&mut self, i: usize) -> &mut Bus {
        &mut self.buses[i]
    }

    pub fn line_mut(&mut self, l: usize) -> &mut Line {
        &mut self.lines[l]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn parent_line(&self, i: usize) -> Option<usize> {
        self.parent_line[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        i != 0 && self.children[i].is_empty()
    }

    /// Neighbors in ascending index order (parent first).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.parent[i].into_iter().chain(self.children[i].iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Index of the line joining `i` and `k`, in either orientation.
    pub fn line_between(&self, i: usize, k: usize) -> Option<usize> {
        if self.parent.get(k).copied().flatten() == Some(i) {
            self.parent_line[k]
        } else if self.parent.get(i).copied().flatten() == Some(k) {
            self.parent_line[i]
        } else {
            None
        }
    }

    /// Same topology (bus count and parent structure); bounds may differ.
    pub fn same_topology(&self, other: &NetworkTree) -> bool {
        self.parent == other.parent
    }

    pub fn is_shunt_free(&self) -> bool {
        self.buses.iter().all(|b| b.shunt_b == 0.0)
    }
}

fn validate_bus(b: &BusRecord) -> Result<(), NetworkError> {
    let bad = |what: String| Err(NetworkError::Bounds { bus: b.id, what });
    for (name, v) in [("p_min", b.p_min), ("p_max", b.p_max), ("q_min", b.q_min), ("q_max", b.q_max)] {
        if v.is_nan() {
            return bad(format!("{name} is NaN"));
        }
    }
    if b.p_min > b.p_max {
        return bad(format!("p_min {} > p_max {}", b.p_min, b.p_max));
    }
    if b.q_min > b.q_max {
        return bad(format!("q_min {} > q_max {}", b.q_min, b.q_max));
    }
    if let Some(v) = b.v_ref {
        if !(v > 0.0 && v.is_finite()) {
            return bad(format!("v_ref must be positive, got {v}"));
        }
    }
    if let Some(s) = b.shunt_b {
        if !s.is_finite() {
            return bad("shunt_b must be finite".into());
        }
    }
    Ok(())
}

/// Parses and validates a network document.
pub fn load_network(source: &str) -> Result<NetworkTree, NetworkError> {
    let doc: NetworkDocument = serde_json::from_str(source).map_err(|e| NetworkError::Parse(e.to_string()))?;
    NetworkTree::from_document(doc)
}

pub fn load_network_file(path: impl AsRef<Path>) -> Result<NetworkTree, NetworkError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| NetworkError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_network(&text)
}

/// Bus admittance matrix `Y`: `Y[i,k] = -y_ik`, `Y[i,i] = sum_k y_ik + j b_ii`.
///
/// `Y` is complex symmetric, not Hermitian.
pub fn admittance_matrix(net: &NetworkTree) -> DMatrix<Complex64> {
    let n = net.n();
    let mut y = DMatrix::zeros(n, n);
    for l in net.lines() {
        let a = l.admittance();
        y[(l.from, l.to)] -= a;
        y[(l.to, l.from)] -= a;
        y[(l.from, l.from)] += a;
        y[(l.to, l.to)] += a;
    }
    for (i, b) in net.buses().iter().enumerate() {
        y[(i, i)] += Complex64::new(0.0, b.shunt_b);
    }
    y
}

/// `A_i = (Y^H E_i + E_i Y) / 2` and `B_i = (Y^H E_i - E_i Y) / 2j`.
pub fn injection_operators(y: &DMatrix<Complex64>, i: usize) -> (HermitianMatrix, HermitianMatrix) {
    let n = y.nrows();
    let mut yh_e = DMatrix::zeros(n, n);
    let mut e_y = DMatrix::zeros(n, n);
    for l in 0..n {
        yh_e[(l, i)] = y[(i, l)].conj();
        e_y[(i, l)] = y[(i, l)];
    }
    let half = Complex64::new(0.5, 0.0);
    let a = (&yh_e + &e_y) * half;
    let b = (&yh_e - &e_y) * Complex64::new(0.0, -0.5);
    (HermitianMatrix::from_matrix(a), HermitianMatrix::from_matrix(b))
}

/// `A_ik` with `Tr(A_ik v v^H) = P_ik`, the active flow leaving `i` towards `k`.
pub fn line_flow_operator(net: &NetworkTree, i: usize, k: usize) -> Result<HermitianMatrix, NotALine> {
    let l = net.line_between(i, k).ok_or(NotALine(i, k))?;
    let line = &net.lines()[l];
    let y = line.admittance();
    let mut m = HermitianMatrix::zeros(net.n());
    m.set(i, i, Complex64::new(line.g, 0.0));
    m.set(i, k, -y * 0.5);
    Ok(m)
}

/// `G_ik = A_ik + A_ki` with `Tr(G_ik v v^H)` the line loss.
pub fn line_loss_operator(net: &NetworkTree, i: usize, k: usize) -> Result<HermitianMatrix, NotALine> {
    Ok(line_flow_operator(net, i, k)?.add(&line_flow_operator(net, k, i)?))
}

/// Operator matrices for `sel`; injections return `(A_i, Some(B_i))`.
pub fn operator_matrices(net: &NetworkTree, sel: Operator) -> Result<(HermitianMatrix, Option<HermitianMatrix>), NotALine> {
    match sel {
        Operator::Injection(i) => {
            let (a, b) = injection_operators(&admittance_matrix(net), i);
            Ok((a, Some(b)))
        }
        Operator::LineFlow(i, k) => Ok((line_flow_operator(net, i, k)?, None)),
        Operator::LineLoss(i, k) => Ok((line_loss_operator(net, i, k)?, None)),
    }
}

/// Generalized edge-to-bus incidence matrix, `n x 2(n-1)`.
///
/// Line `l` owns columns `2l` (parent to child) and `2l + 1` (child to parent);
/// `M[i, (k, m)] = 1` iff `i == k`, so `M f` sums the flows leaving each bus.
pub fn incidence_matrix(net: &NetworkTree) -> DMatrix<f64> {
    let n = net.n();
    let mut m = DMatrix::zeros(n, 2 * (n - 1));
    for (l, line) in net.lines().iter().enumerate() {
        m[(line.from, 2 * l)] = 1.0;
        m[(line.to, 2 * l + 1)] = 1.0;
    }
    m
}
