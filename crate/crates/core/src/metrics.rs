//! Onset + pitch scoring: an optimal one-to-one matching of reference and
//! estimated notes, and precision / recall / F1 from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::targets::NoteEvent;

/// Default onset tolerance in seconds (±3 frames at 30 fps).
pub const DEFAULT_TOLERANCE: f64 = 0.1;
/// Slack added to the tolerance comparison to absorb floating-point error in
/// onset differences.
const TOLERANCE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(ref index, est index)`, sorted by ref index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_ref: Vec<usize>,
    pub unmatched_est: Vec<usize>,
    pub onset_tolerance: f64,
}

/// Whether two notes may be paired at tolerance `tol` (inclusive).
pub fn admissible(r: &NoteEvent, e: &NoteEvent, tol: f64) -> bool {
    r.pitch == e.pitch && (r.onset - e.onset).abs() <= tol + TOLERANCE_SLACK
}

/// Successive-shortest-path min-cost flow on a unit-capacity bipartite graph.
struct FlowGraph {
    to: Vec<usize>,
    cap: Vec<i32>,
    cost: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        FlowGraph {
            to: Vec::new(),
            cap: Vec::new(),
            cost: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cost: f64) -> usize {
        let id = self.to.len();
        self.to.extend([v, u]);
        self.cap.extend([1, 0]);
        self.cost.extend([cost, -cost]);
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    /// Push unit flow along cheapest augmenting paths until none remain; the
    /// result is a maximum flow of minimum cost.
    fn run(&mut self, s: usize, t: usize) {
        let n = self.adj.len();
        loop {
            // Bellman-Ford: residual edges can carry negative cost
            let mut dist = vec![f64::INFINITY; n];
            let mut via = vec![usize::MAX; n];
            dist[s] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u] == f64::INFINITY {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let v = self.to[e];
                        let nd = dist[u] + self.cost[e];
                        if self.cap[e] > 0 && nd < dist[v] - 1e-12 {
                            dist[v] = nd;
                            via[v] = e;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t] == f64::INFINITY {
                return;
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
        }
    }
}

/// Maximum-cardinality matching of equal-pitch notes within `tol` seconds;
/// among maximum matchings, the one with the smallest total onset distance.
pub fn match_notes(reference: &[NoteEvent], estimate: &[NoteEvent], tol: f64) -> MatchResult {
    assert!(tol >= 0.0, "tolerance must be non-negative");
    let mut by_pitch: BTreeMap<u8, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, n) in reference.iter().enumerate() {
        by_pitch.entry(n.pitch).or_default().0.push(i);
    }
    for (j, n) in estimate.iter().enumerate() {
        by_pitch.entry(n.pitch).or_default().1.push(j);
    }

    let mut pairs = Vec::new();
    for (refs, ests) in by_pitch.values() {
        if refs.is_empty() || ests.is_empty() {
            continue;
        }
        // nodes: source, refs, ests, sink
        let (s, t) = (0, 1 + refs.len() + ests.len());
        let mut g = FlowGraph::new(t + 1);
        let mut cross = Vec::new();
        for (a, &i) in refs.iter().enumerate() {
            g.add_edge(s, 1 + a, 0.0);
            for (b, &j) in ests.iter().enumerate() {
                if admissible(&reference[i], &estimate[j], tol) {
                    let d = (reference[i].onset - estimate[j].onset).abs();
                    cross.push((g.add_edge(1 + a, 1 + refs.len() + b, d), i, j));
                }
            }
        }
        for b in 0..ests.len() {
            g.add_edge(1 + refs.len() + b, t, 0.0);
        }
        g.run(s, t);
        pairs.extend(cross.into_iter().filter(|&(e, _, _)| g.cap[e] == 0).map(|(_, i, j)| (i, j)));
    }
    pairs.sort_unstable();

    let mut ref_used = vec![false; reference.len()];
    let mut est_used = vec![false; estimate.len()];
    for &(i, j) in &pairs {
        ref_used[i] = true;
        est_used[j] = true;
    }
    MatchResult {
        pairs,
        unmatched_ref: (0..reference.len()).filter(|&i| !ref_used[i]).collect(),
        unmatched_est: (0..estimate.len()).filter(|&j| !est_used[j]).collect(),
        onset_tolerance: tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 from a matching. Both lists empty scores 1 across
/// the board; an empty side otherwise scores 0.
pub fn precision_recall_f1(m: &MatchResult, n_ref: usize, n_est: usize) -> Result<Scores> {
    prf_from_counts(m.pairs.len(), n_ref, n_est)
}

pub fn prf_from_counts(matched: usize, n_ref: usize, n_est: usize) -> Result<Scores> {
    if matched > n_ref.min(n_est) {
        return Err(Error::Metrics(format!(
            "{matched} matches exceed min(n_ref={n_ref}, n_est={n_est})"
        )));
    }
    if n_ref == 0 && n_est == 0 {
        return Ok(Scores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let ratio = |n: usize| if n == 0 { 0.0 } else { matched as f64 / n as f64 };
    let (p, r) = (ratio(n_est), ratio(n_ref));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok(Scores {
        precision: p,
        recall: r,
        f1,
    })
}

/// One evaluated file.
#[derive(Clone, Debug, PartialEq)]
pub struct FileScore {
    pub name: String,
    pub n_ref: usize,
    pub n_est: usize,
    pub matched: usize,
    pub scores: Scores,
}

pub fn score_file(name: &str, reference: &[NoteEvent], estimate: &[NoteEvent], tol: f64) -> Result<FileScore> {
    let m = match_notes(reference, estimate, tol);
    Ok(FileScore {
        name: name.to_string(),
        n_ref: reference.len(),
        n_est: estimate.len(),
        matched: m.pairs.len(),
        scores: precision_recall_f1(&m, reference.len(), estimate.len())?,
    })
}

/// Pooled note counts across files.
pub fn micro_average(files: &[FileScore]) -> Result<FileScore> {
    let n_ref = files.iter().map(|f| f.n_ref).sum();
    let n_est = files.iter().map(|f| f.n_est).sum();
    let matched = files.iter().map(|f| f.matched).sum();
    Ok(FileScore {
        name: "micro".into(),
        n_ref,
        n_est,
        matched,
        scores: prf_from_counts(matched, n_ref, n_est)?,
    })
}

/// Unweighted mean of per-file scores.
pub fn macro_average(files: &[FileScore]) -> Scores {
    let n = files.len().max(1) as f64;
    let mean = |f: fn(&Scores) -> f64| files.iter().map(|x| f(&x.scores)).sum::<f64>() / n;
    Scores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    }
}

/// CSV report: one row per file, then `micro` (headline) and `macro` rows.
pub fn report_csv(files: &[FileScore]) -> Result<String> {
    let mut s = String::from("file,n_ref,n_est,matched,precision,recall,f1\n");
    let row = |s: &mut String, f: &FileScore| {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            f.name, f.n_ref, f.n_est, f.matched, f.scores.precision, f.scores.recall, f.scores.f1
        );
    };
    for f in files {
        row(&mut s, f);
    }
    let micro = micro_average(files)?;
    row(&mut s, &micro);
    let mac = macro_average(files);
    let _ = writeln!(
        s,
        "macro,{},{},{},{:.6},{:.6},{:.6}",
        micro.n_ref, micro.n_est, micro.matched, mac.precision, mac.recall, mac.f1
    );
    Ok(s)
}
