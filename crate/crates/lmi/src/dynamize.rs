//! Structural operators and the occupancy policy that drives them.
//!
//! Three operators reshape a live index without touching the payload store:
//!
//! * **deepen** replaces one leaf with a freshly trained inner node whose
//!   leaf children take the objects by the new model's own predictions;
//! * **broaden** collapses an inner node's whole subtree and retrains it as
//!   one flat inner node with a wider fan-out;
//! * **shorten** deletes one leaf, removes the matching output of the
//!   parent's model (surviving outputs keep bit-identical logits), and
//!   re-inserts the orphaned objects through ordinary routing.
//!
//! Every operator ends by re-checking the index invariants, so a bug
//! surfaces at the operation that introduced it, not at some later read.
//!
//! [`enforce_policies`] sweeps the tree after inserts: it first shortens
//! underfull leaves (processing positions in descending lexicographic order
//! so that sibling renumbering can never invalidate a position that is
//! still queued), then performs one split — deepen where depth allows,
//! otherwise broaden the parent — whenever the average leaf occupancy is at
//! the cap, repeating until neither rule fires. Everything it does lands in
//! an [`ActionLog`]; situations it cannot fix (an underfull leaf that is
//! its parent's only child, a split whose clamps contradict, the action
//! cap) are recorded as a stall instead of being retried forever or
//! silently dropped.

use std::fmt;
use std::time::Instant;

use crate::index::{Index, Node, NodePos, OpCost};
use crate::{Error, Result};

/// Which structural operator ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Deepen,
    Broaden,
    Shorten,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Deepen => "deepen",
            OperatorKind::Broaden => "broaden",
            OperatorKind::Shorten => "shorten",
        })
    }
}

/// Outcome of one operator application.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorReport {
    pub operator: OperatorKind,
    pub target: NodePos,
    /// Fan-out for deepen/broaden; `None` for shorten.
    pub n_child: Option<usize>,
    /// Objects whose bucket assignment was recomputed.
    pub objects_moved: usize,
    pub cost: OpCost,
}

/// What made the policy act.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    Underflow { occupancy: usize },
    Overflow { avg_occupancy: f64 },
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Underflow { occupancy } => write!(f, "underflow(occ={occupancy})"),
            Trigger::Overflow { avg_occupancy } => {
                write!(f, "overflow(avg={avg_occupancy:.3})")
            }
        }
    }
}

/// One policy-driven action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub seq: usize,
    pub trigger: Trigger,
    pub operator: OperatorKind,
    pub target: NodePos,
    pub n_child: Option<usize>,
    pub objects_moved: usize,
    pub cost: OpCost,
    pub leaf_count_after: usize,
    /// Index size when the action ran.
    pub object_count: usize,
}

/// Ordered history of policy actions plus an optional stall note.
#[derive(Debug, Clone, Default)]
pub struct ActionLog {
    pub records: Vec<ActionRecord>,
    /// Set when the policy hit a state it cannot fix; the sweep still
    /// terminates and the note says why.
    pub stalled: Option<String>,
}

impl ActionLog {
    /// No actions ran and nothing stalled.
    pub fn is_clean(&self) -> bool {
        self.records.is_empty() && self.stalled.is_none()
    }

    /// Summed operator cost.
    pub fn total_cost(&self) -> OpCost {
        let mut total = OpCost::default();
        for r in &self.records {
            total.seconds += r.cost.seconds;
            total.proxy += r.cost.proxy;
        }
        total
    }

    /// Appends another log, renumbering its records to continue this one.
    /// A newer stall note replaces an older one (the older state no longer
    /// exists).
    pub fn append(&mut self, other: ActionLog) {
        let base = self.records.len();
        for (i, mut r) in other.records.into_iter().enumerate() {
            r.seq = base + i;
            self.records.push(r);
        }
        if other.stalled.is_some() {
            self.stalled = other.stalled;
        }
    }

    /// The log as CSV, one line per action.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seq,trigger,operator,target,n_child,objects_moved,cost_proxy,cost_seconds,\
             leaf_count_after,object_count\n",
        );
        for r in &self.records {
            let n_child = r.n_child.map_or(String::new(), |n| n.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.seq,
                r.trigger,
                r.operator,
                r.target,
                n_child,
                r.objects_moved,
                r.cost.proxy,
                r.cost.seconds,
                r.leaf_count_after,
                r.object_count,
            ));
        }
        out
    }
}

/// Occupancy policy. Defaults: shorten leaves under 5 objects, split while
/// the average leaf holds 1000 or more, size new fan-outs for about 500
/// objects per leaf, check after every insert.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    /// Leaves below this occupancy are shortened away (the root leaf is
    /// exempt: it has no parent).
    pub underflow_min: usize,
    /// While `objects / leaves` is at or above this, one split runs per
    /// sweep iteration.
    pub max_avg_leaf_occupancy: f64,
    /// Desired objects per leaf when choosing a split fan-out.
    pub target_leaf_fill: usize,
    /// Run a sweep after this many inserts.
    pub check_every: usize,
    /// Upper bound on actions in one sweep; exceeding it records a stall.
    pub max_actions_per_sweep: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            underflow_min: 5,
            max_avg_leaf_occupancy: 1000.0,
            target_leaf_fill: 500,
            check_every: 1,
            max_actions_per_sweep: 10_000,
        }
    }
}

/// Replaces the leaf at `target` with a trained inner node fanning out to
/// `n_child` fresh leaves; the leaf's objects land where the new model
/// predicts them. The leaf must sit above the maximum depth and hold at
/// least one object.
pub fn deepen(index: &mut Index, target: &NodePos, n_child: usize) -> Result<OperatorReport> {
    let started = Instant::now();
    if n_child < 2 {
        return Err(Error::InvalidArgument("deepen needs n_child >= 2".into()));
    }
    let max_depth = index.options().max_depth;
    let bucket = match index.node_at(target) {
        None => return Err(Error::NoSuchNode(target.clone())),
        Some(Node::Inner(_)) => return Err(Error::NotALeaf(target.clone())),
        Some(Node::Leaf(l)) => l.bucket.clone(),
    };
    if target.depth() >= max_depth {
        return Err(Error::InvalidArgument(format!(
            "deepen at {target} would push leaves past max depth {max_depth}"
        )));
    }
    if bucket.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points: Vec<Vec<f32>> =
        bucket.iter().map(|&id| index_point(index, id).to_vec()).collect();
    let refs: Vec<&[f32]> = points.iter().map(|p| p.as_slice()).collect();
    let (node, proxy) = index.trained_inner(target.clone(), &bucket, &refs, n_child)?;
    *index.node_at_mut(target).expect("target existed above") = node;
    index.check_consistency()?;
    Ok(OperatorReport {
        operator: OperatorKind::Deepen,
        target: target.clone(),
        n_child: Some(n_child),
        objects_moved: bucket.len(),
        cost: OpCost { seconds: started.elapsed().as_secs_f64(), proxy },
    })
}

/// Collapses the subtree under the inner node at `target` and retrains it
/// as one flat inner node with `n_child` leaf children over the same
/// objects.
pub fn broaden(index: &mut Index, target: &NodePos, n_child: usize) -> Result<OperatorReport> {
    let started = Instant::now();
    if n_child < 2 {
        return Err(Error::InvalidArgument("broaden needs n_child >= 2".into()));
    }
    match index.node_at(target) {
        None => return Err(Error::NoSuchNode(target.clone())),
        Some(Node::Leaf(_)) => return Err(Error::NotAnInner(target.clone())),
        Some(Node::Inner(_)) => {}
    }
    let ids = index.subtree_ids(target)?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points: Vec<Vec<f32>> = ids.iter().map(|&id| index_point(index, id).to_vec()).collect();
    let refs: Vec<&[f32]> = points.iter().map(|p| p.as_slice()).collect();
    let (node, proxy) = index.trained_inner(target.clone(), &ids, &refs, n_child)?;
    *index.node_at_mut(target).expect("target existed above") = node;
    index.check_consistency()?;
    Ok(OperatorReport {
        operator: OperatorKind::Broaden,
        target: target.clone(),
        n_child: Some(n_child),
        objects_moved: ids.len(),
        cost: OpCost { seconds: started.elapsed().as_secs_f64(), proxy },
    })
}

/// Deletes the leaf at `target`: the parent model loses the matching
/// output (surviving logits stay bit-identical), later siblings shift down
/// one position, and the orphaned objects are re-inserted through ordinary
/// routing. Fails on the root (no parent) and on a parent's only child.
pub fn shorten(index: &mut Index, target: &NodePos) -> Result<OperatorReport> {
    let started = Instant::now();
    match index.node_at(target) {
        None => return Err(Error::NoSuchNode(target.clone())),
        Some(Node::Inner(_)) => return Err(Error::NotALeaf(target.clone())),
        Some(Node::Leaf(_)) => {}
    }
    let parent_pos = target
        .parent()
        .ok_or_else(|| Error::InvalidArgument("cannot shorten the root".into()))?;
    let child_idx = *target.0.last().expect("non-root position has a last element");

    let parent = match index.node_at_mut(&parent_pos) {
        Some(Node::Inner(inner)) => inner,
        _ => unreachable!("parent of an existing node is an inner node"),
    };
    if parent.children.len() < 2 {
        return Err(Error::WouldEmptyParent(parent_pos));
    }
    let (new_model, _remap) = parent.model.remove_output(child_idx)?;
    parent.model = new_model;
    let removed = match parent.children.remove(child_idx) {
        Node::Leaf(l) => l.bucket,
        Node::Inner(_) => unreachable!("target was checked to be a leaf"),
    };
    // Later siblings (and their subtrees) slide down one slot.
    for i in child_idx..parent.children.len() {
        let base = parent_pos.child(i);
        parent.children[i].renumber(base);
    }

    // Re-insert the orphans through the post-surgery tree. Routing reads
    // models only, so destinations can be computed up front.
    let mut proxy = 0.0f64;
    let mut destinations = Vec::with_capacity(removed.len());
    for &id in &removed {
        let (pos, cost) = index.route(index_point(index, id))?;
        proxy += cost;
        destinations.push(pos);
    }
    for (&id, pos) in removed.iter().zip(&destinations) {
        match index.node_at_mut(pos) {
            Some(Node::Leaf(l)) => l.bucket.push(id),
            _ => unreachable!("routing ends at a leaf"),
        }
    }
    index.check_consistency()?;
    Ok(OperatorReport {
        operator: OperatorKind::Shorten,
        target: target.clone(),
        n_child: None,
        objects_moved: removed.len(),
        cost: OpCost { seconds: started.elapsed().as_secs_f64(), proxy },
    })
}

/// Component slice for a stored id; ids inside buckets are always stored.
fn index_point(index: &Index, id: u64) -> &[f32] {
    index.store.get(id).expect("bucketed id is stored")
}

/// Fan-out for splitting `moved` objects: about `target_fill` per new
/// leaf, at least 2, never more than one leaf per object. Broaden callers
/// additionally raise the floor to strictly exceed the current leaf count.
fn split_fanout(moved: usize, target_fill: usize, min_leaves: usize) -> Option<usize> {
    let want = moved.div_ceil(target_fill.max(1)).max(2).max(min_leaves);
    if want > moved {
        None // cannot split this finely; caller records a stall
    } else {
        Some(want)
    }
}

/// Runs the occupancy policy until neither rule fires. Each iteration
/// first shortens every underfull leaf (descending lexicographic order,
/// re-checking occupancy as earlier shortens may refill a queued leaf),
/// then runs at most one split. Returns the full action history.
pub fn enforce_policies(index: &mut Index, policy: &PolicyConfig) -> Result<ActionLog> {
    let mut log = ActionLog::default();
    let mut stalls: Vec<String> = Vec::new();

    loop {
        let mut acted = false;

        // Underfull leaves, deepest-right first so renumbering cannot touch
        // queued positions. The root leaf has no parent and is exempt.
        let mut underfull: Vec<NodePos> = index
            .leaves()
            .into_iter()
            .filter(|(pos, occ)| pos.depth() > 0 && *occ < policy.underflow_min)
            .map(|(pos, _)| pos)
            .collect();
        underfull.sort();
        underfull.reverse();
        for pos in underfull {
            let occupancy = match index.node_at(&pos) {
                Some(Node::Leaf(l)) => l.bucket.len(),
                _ => unreachable!("underflow candidates stay leaves within a batch"),
            };
            if occupancy >= policy.underflow_min {
                continue; // refilled by an earlier shorten in this batch
            }
            match shorten(index, &pos) {
                Ok(report) => {
                    push_record(&mut log, index, Trigger::Underflow { occupancy }, report);
                    acted = true;
                }
                Err(Error::WouldEmptyParent(parent)) => {
                    stalls.push(format!(
                        "leaf {pos} holds {occupancy} < {} objects but is the only child \
                         of {parent}",
                        policy.underflow_min
                    ));
                }
                Err(e) => return Err(e),
            }
        }

        // One split per iteration while the average leaf is at the cap.
        let stats_leaves = index.leaves();
        let avg = index.len() as f64 / stats_leaves.len() as f64;
        if avg >= policy.max_avg_leaf_occupancy {
            let mut fullest: Option<(&NodePos, usize)> = None;
            for (pos, occ) in &stats_leaves {
                if fullest.is_none_or(|(_, best)| *occ > best) {
                    fullest = Some((pos, *occ));
                }
            }
            let (pos, occ) = fullest.expect("an index always has at least one leaf");
            let pos = pos.clone();
            let trigger = Trigger::Overflow { avg_occupancy: avg };
            if pos.depth() < index.options().max_depth {
                match split_fanout(occ, policy.target_leaf_fill, 2) {
                    Some(n_child) => {
                        let report = deepen(index, &pos, n_child)?;
                        push_record(&mut log, index, trigger, report);
                        acted = true;
                    }
                    None => stalls.push(format!(
                        "leaf {pos} (occ {occ}) is at the overflow cap but too small to split"
                    )),
                }
            } else {
                let parent = pos.parent().expect("max_depth >= 1, so this leaf has a parent");
                let moved = index.subtree_ids(&parent)?.len();
                let subtree_leaves = index
                    .leaves()
                    .iter()
                    .filter(|(p, _)| p.0.starts_with(&parent.0))
                    .count();
                match split_fanout(moved, policy.target_leaf_fill, subtree_leaves + 1) {
                    Some(n_child) => {
                        let report = broaden(index, &parent, n_child)?;
                        push_record(&mut log, index, trigger, report);
                        acted = true;
                    }
                    None => stalls.push(format!(
                        "subtree {parent} ({moved} objects, {subtree_leaves} leaves) is at \
                         the overflow cap but cannot fan out wider"
                    )),
                }
            }
        }

        if !acted {
            break;
        }
        if log.records.len() > policy.max_actions_per_sweep {
            stalls.push(format!(
                "action cap {} exceeded; policy did not reach a fixed point",
                policy.max_actions_per_sweep
            ));
            break;
        }
    }

    if !stalls.is_empty() {
        stalls.sort();
        stalls.dedup();
        log.stalled = Some(stalls.join("; "));
    }
    Ok(log)
}

fn push_record(log: &mut ActionLog, index: &Index, trigger: Trigger, report: OperatorReport) {
    log.records.push(ActionRecord {
        seq: log.records.len(),
        trigger,
        operator: report.operator,
        target: report.target,
        n_child: report.n_child,
        objects_moved: report.objects_moved,
        cost: report.cost,
        leaf_count_after: index.leaves().len(),
        object_count: index.len(),
    });
}

/// An index that maintains itself: every `check_every` inserts it sweeps
/// the occupancy policy and accumulates the resulting actions.
#[derive(Debug, Clone)]
pub struct DynamizedIndex {
    index: Index,
    policy: PolicyConfig,
    inserts_since_check: usize,
    log: ActionLog,
}

impl DynamizedIndex {
    pub fn new(index: Index, policy: PolicyConfig) -> Self {
        Self { index, policy, inserts_since_check: 0, log: ActionLog::default() }
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    /// Everything the policy has done so far.
    pub fn log(&self) -> &ActionLog {
        &self.log
    }

    /// Summed cost of all structural maintenance so far (the initial build,
    /// if any, is accounted separately by [`Index::build_cost`]).
    pub fn structural_cost(&self) -> OpCost {
        self.log.total_cost()
    }

    pub fn into_index(self) -> Index {
        self.index
    }

    /// Inserts one vector and, when the check interval is due, sweeps the
    /// policy.
    pub fn insert(&mut self, v: &crate::dataset::Vector) -> Result<()> {
        self.index.insert(v)?;
        self.inserts_since_check += 1;
        if self.inserts_since_check >= self.policy.check_every {
            self.inserts_since_check = 0;
            self.maintain()?;
        }
        Ok(())
    }

    /// Runs one policy sweep immediately; actions are appended to the
    /// cumulative log and also returned.
    pub fn maintain(&mut self) -> Result<ActionLog> {
        let sweep = enforce_policies(&mut self.index, &self.policy)?;
        self.log.append(sweep.clone());
        Ok(sweep)
    }
}
