//! Core data types: item sets, instances, allocations, matchings and
//! fractional solutions, plus the instance JSON schema and the NSW objective.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::error::{NswError, Result};
use crate::valuations::Valuation;

/// Hard upper bound on the item universe. Item sets are 64-bit masks.
pub const MAX_ITEMS: usize = 64;

/// Default absolute tolerance for `<=` / `>=` constraint checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// A set of items from a universe of at most [`MAX_ITEMS`] items.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ItemSet(u64);

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ItemSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// All items `0..m`.
    pub fn full(m: usize) -> Self {
        assert!(m <= MAX_ITEMS, "item universe larger than {MAX_ITEMS}");
        if m == MAX_ITEMS {
            ItemSet(u64::MAX)
        } else {
            ItemSet((1u64 << m) - 1)
        }
    }

    pub fn singleton(j: usize) -> Self {
        debug_assert!(j < MAX_ITEMS);
        ItemSet(1u64 << j)
    }

    pub fn from_items<I: IntoIterator<Item = usize>>(items: I) -> Self {
        items.into_iter().fold(ItemSet::EMPTY, |s, j| s.with(j))
    }

    pub fn contains(self, j: usize) -> bool {
        j < MAX_ITEMS && self.0 & (1u64 << j) != 0
    }

    pub fn with(self, j: usize) -> Self {
        ItemSet(self.0 | (1u64 << j))
    }

    pub fn without(self, j: usize) -> Self {
        ItemSet(self.0 & !(1u64 << j))
    }

    pub fn insert(&mut self, j: usize) {
        self.0 |= 1u64 << j;
    }

    pub fn remove(&mut self, j: usize) {
        self.0 &= !(1u64 << j);
    }

    pub fn union(self, other: ItemSet) -> Self {
        ItemSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ItemSet) -> Self {
        ItemSet(self.0 & other.0)
    }

    pub fn difference(self, other: ItemSet) -> Self {
        ItemSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: ItemSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: ItemSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Lowest item in the set.
    pub fn first(self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0.trailing_zeros() as usize)
        }
    }

    pub fn iter(self) -> ItemIter {
        ItemIter(self.0)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Iterate over every subset of `self`, starting with the empty set and
    /// ending with `self`.
    pub fn subsets(self) -> Subsets {
        Subsets {
            universe: self.0,
            next: Some(0),
        }
    }

    /// Canonical order used for tie-breaking: smaller sets first, then
    /// lexicographic on the ascending item lists.
    pub fn canonical_cmp(self, other: ItemSet) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.iter().cmp(other.iter()))
    }
}

impl fmt::Debug for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for ItemSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ItemSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let items = Vec::<usize>::deserialize(deserializer)?;
        if let Some(&bad) = items.iter().find(|&&j| j >= MAX_ITEMS) {
            return Err(serde::de::Error::custom(format!("item index {bad} out of range")));
        }
        Ok(ItemSet::from_items(items))
    }
}

impl FromIterator<usize> for ItemSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        ItemSet::from_items(iter)
    }
}

pub struct ItemIter(u64);

impl Iterator for ItemIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let j = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(j)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for ItemIter {}

pub struct Subsets {
    universe: u64,
    next: Option<u64>,
}

impl Iterator for Subsets {
    type Item = ItemSet;

    fn next(&mut self) -> Option<ItemSet> {
        let cur = self.next?;
        self.next = if cur == self.universe {
            None
        } else {
            // standard submask increment
            Some(((cur | !self.universe).wrapping_add(1)) & self.universe)
        };
        Some(ItemSet(cur))
    }
}

/// A Nash social welfare instance. Agents and items are dense indices;
/// external names live in the side tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    agent_names: Vec<String>,
    item_names: Vec<String>,
    valuations: Vec<Valuation>,
}

impl Instance {
    pub fn new(
        agent_names: Vec<String>,
        item_names: Vec<String>,
        valuations: Vec<Valuation>,
    ) -> Result<Self> {
        let m = item_names.len();
        if agent_names.is_empty() {
            return Err(NswError::schema("$.agents", "at least one agent required"));
        }
        if m == 0 {
            return Err(NswError::schema("$.items", "at least one item required"));
        }
        if m > MAX_ITEMS {
            return Err(NswError::schema(
                "$.items",
                format!("at most {MAX_ITEMS} items supported, got {m}"),
            ));
        }
        if agent_names.len() != valuations.len() {
            return Err(NswError::schema("$.agents", "one valuation per agent required"));
        }
        for (i, v) in valuations.iter().enumerate() {
            if v.num_items() != m {
                return Err(NswError::schema(
                    format!("$.agents[{i}].valuation"),
                    format!("valuation defined over {} items, instance has {m}", v.num_items()),
                ));
            }
        }
        Ok(Instance {
            agent_names,
            item_names,
            valuations,
        })
    }

    /// Instance with generated names `a0.., i0..`.
    pub fn from_valuations(m: usize, valuations: Vec<Valuation>) -> Result<Self> {
        let agents = (0..valuations.len()).map(|i| format!("a{i}")).collect();
        let items = (0..m).map(|j| format!("i{j}")).collect();
        Instance::new(agents, items, valuations)
    }

    pub fn num_agents(&self) -> usize {
        self.agent_names.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_names.len()
    }

    pub fn all_items(&self) -> ItemSet {
        ItemSet::full(self.num_items())
    }

    pub fn valuation(&self, agent: usize) -> &Valuation {
        &self.valuations[agent]
    }

    pub fn valuations(&self) -> &[Valuation] {
        &self.valuations
    }

    pub fn agent_names(&self) -> &[String] {
        &self.agent_names
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn value(&self, agent: usize, set: ItemSet) -> f64 {
        self.valuations[agent].value(set)
    }

    /// Apply permutations to agents and items. `agent_perm[new] = old`,
    /// `item_perm[new] = old`.
    pub fn relabeled(&self, agent_perm: &[usize], item_perm: &[usize]) -> Instance {
        let valuations = agent_perm
            .iter()
            .map(|&old| self.valuations[old].permute_items(item_perm))
            .collect();
        Instance {
            agent_names: agent_perm.iter().map(|&a| self.agent_names[a].clone()).collect(),
            item_names: item_perm.iter().map(|&j| self.item_names[j].clone()).collect(),
            valuations,
        }
    }
}

/// Disjoint bundles, one per agent. Unallocated items are allowed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub bundles: Vec<ItemSet>,
}

impl Allocation {
    pub fn empty(n: usize) -> Self {
        Allocation {
            bundles: vec![ItemSet::EMPTY; n],
        }
    }

    pub fn allocated(&self) -> ItemSet {
        self.bundles.iter().fold(ItemSet::EMPTY, |acc, &b| acc.union(b))
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        if self.bundles.len() != inst.num_agents() {
            return Err(NswError::invariant(format!(
                "allocation has {} bundles for {} agents",
                self.bundles.len(),
                inst.num_agents()
            )));
        }
        let universe = inst.all_items();
        let mut seen = ItemSet::EMPTY;
        for (i, &b) in self.bundles.iter().enumerate() {
            if !b.is_subset(universe) {
                return Err(NswError::invariant(format!("bundle of agent {i} has unknown items")));
            }
            if !b.is_disjoint(seen) {
                return Err(NswError::invariant(format!(
                    "bundle of agent {i} overlaps an earlier bundle"
                )));
            }
            seen = seen.union(b);
        }
        Ok(())
    }
}

/// Injective partial map agent -> item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub assignment: Vec<Option<usize>>,
}

impl Matching {
    pub fn new(assignment: Vec<Option<usize>>) -> Result<Self> {
        let m = Matching { assignment };
        m.check_injective()?;
        Ok(m)
    }

    pub fn get(&self, agent: usize) -> Option<usize> {
        self.assignment.get(agent).copied().flatten()
    }

    pub fn range(&self) -> ItemSet {
        self.assignment.iter().flatten().copied().collect()
    }

    pub fn check_injective(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, item) in self.assignment.iter().enumerate() {
            if let Some(j) = item {
                if !seen.insert(*j) {
                    return Err(NswError::invariant(format!(
                        "matching not injective: item {j} reused by agent {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sparse per-agent distributions over item sets (`x_{i,S}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSolution {
    pub columns: Vec<Vec<(ItemSet, f64)>>,
}

impl ConfigSolution {
    pub fn empty(n: usize) -> Self {
        ConfigSolution {
            columns: vec![Vec::new(); n],
        }
    }

    pub fn agent_weight(&self, agent: usize) -> f64 {
        self.columns[agent].iter().map(|(_, w)| w).sum()
    }

    /// Total mass on item `j` summed over agents and sets.
    pub fn item_load(&self, j: usize) -> f64 {
        self.columns
            .iter()
            .flatten()
            .filter(|(s, _)| s.contains(j))
            .map(|(_, w)| w)
            .sum()
    }

    pub fn max_item_load(&self, m: usize) -> f64 {
        (0..m).map(|j| self.item_load(j)).fold(0.0, f64::max)
    }

    /// `Σ_S v_i(S) x_{i,S}`.
    pub fn agent_value(&self, agent: usize, v: &Valuation) -> f64 {
        self.columns[agent].iter().map(|&(s, w)| w * v.value(s)).sum()
    }

    /// Item marginals `x_{ij} = Σ_{S∋j} x_{i,S}`.
    pub fn marginals(&self, agent: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for &(s, w) in &self.columns[agent] {
            for j in s.iter() {
                out[j] += w;
            }
        }
        out
    }
}

/// Per-agent per-item fractional mass. Rows are indexed by position in
/// `agents`; each row spans the full item universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFractional {
    pub agents: Vec<usize>,
    pub items: ItemSet,
    pub mass: Vec<Vec<f64>>,
}

impl ItemFractional {
    pub fn row(&self, agent: usize) -> Option<&[f64]> {
        self.agents
            .iter()
            .position(|&a| a == agent)
            .map(|k| self.mass[k].as_slice())
    }

    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        let m = self.mass.first().map_or(0, Vec::len);
        for row in &self.mass {
            for (j, &x) in row.iter().enumerate() {
                if !(-tol..=1.0 + tol).contains(&x) {
                    return Err(NswError::invariant(format!("x[{j}] = {x} outside [0,1]")));
                }
            }
        }
        for j in 0..m {
            let load: f64 = self.mass.iter().map(|r| r[j]).sum();
            if load > 1.0 + tol {
                return Err(NswError::invariant(format!("item {j} overloaded: {load}")));
            }
        }
        Ok(())
    }
}

/// `(Π_i v_i(S_i))^{1/n}`, exactly 0 if any bundle is worthless.
pub fn nsw_value(alloc: &Allocation, inst: &Instance) -> f64 {
    let values: Vec<f64> = alloc
        .bundles
        .iter()
        .enumerate()
        .map(|(i, &b)| inst.value(i, b))
        .collect();
    geometric_mean(&values)
}

/// Geometric mean computed in log space; 0 when any entry is 0.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let log_sum: f64 = values.iter().map(|v| v.ln()).sum();
    (log_sum / values.len() as f64).exp()
}

// ---------------------------------------------------------------------------
// JSON schema

fn key_for(set: ItemSet) -> String {
    set.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")
}

fn read_real(v: &Value, path: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| NswError::schema(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(NswError::schema(path, "non-finite value"));
    }
    if x < 0.0 {
        return Err(NswError::schema(path, "negative weight"));
    }
    Ok(x)
}

fn read_reals(v: &Value, path: &str, expected_len: usize) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| NswError::schema(path, "expected an array"))?;
    if arr.len() != expected_len {
        return Err(NswError::schema(
            path,
            format!("expected {expected_len} entries, got {}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(j, x)| read_real(x, &format!("{path}[{j}]")))
        .collect()
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| NswError::schema(path, format!("missing field \"{name}\"")))
}

fn parse_table_key(key: &str, m: usize) -> Option<ItemSet> {
    if key.is_empty() {
        return Some(ItemSet::EMPTY);
    }
    let mut set = ItemSet::EMPTY;
    let mut prev: Option<usize> = None;
    for part in key.split(',') {
        let j: usize = part.trim().parse().ok()?;
        if j >= m || prev.is_some_and(|p| p >= j) {
            return None;
        }
        prev = Some(j);
        set.insert(j);
    }
    Some(set)
}

fn parse_valuation(v: &Value, path: &str, m: usize) -> Result<Valuation> {
    let obj = v
        .as_object()
        .ok_or_else(|| NswError::schema(path, "expected an object"))?;
    let kind = field(obj, "kind", path)?
        .as_str()
        .ok_or_else(|| NswError::schema(format!("{path}.kind"), "expected a string"))?;
    match kind {
        "additive" => {
            let w = read_reals(field(obj, "weights", path)?, &format!("{path}.weights"), m)?;
            Ok(Valuation::additive(w))
        }
        "xos" => {
            let cpath = format!("{path}.clauses");
            let arr = field(obj, "clauses", path)?
                .as_array()
                .ok_or_else(|| NswError::schema(&cpath, "expected an array"))?;
            if arr.is_empty() {
                return Err(NswError::schema(&cpath, "at least one clause required"));
            }
            let clauses = arr
                .iter()
                .enumerate()
                .map(|(k, c)| read_reals(c, &format!("{cpath}[{k}]"), m))
                .collect::<Result<Vec<_>>>()?;
            Ok(Valuation::xos(clauses))
        }
        "budgeted_additive" => {
            let w = read_reals(field(obj, "weights", path)?, &format!("{path}.weights"), m)?;
            let cap = read_real(field(obj, "cap", path)?, &format!("{path}.cap"))?;
            Ok(Valuation::budgeted(w, cap))
        }
        "table" => {
            let tpath = format!("{path}.values");
            if m > crate::valuations::ENUMERATION_CAP {
                return Err(NswError::schema(
                    &tpath,
                    format!(
                        "table valuations support at most {} items",
                        crate::valuations::ENUMERATION_CAP
                    ),
                ));
            }
            let map = field(obj, "values", path)?
                .as_object()
                .ok_or_else(|| NswError::schema(&tpath, "expected an object"))?;
            let mut values = vec![f64::NAN; 1usize << m];
            values[0] = 0.0;
            for (key, x) in map {
                let kpath = format!("{tpath}[\"{key}\"]");
                let set = parse_table_key(key, m)
                    .ok_or_else(|| NswError::schema(&kpath, "malformed subset key"))?;
                values[set.bits() as usize] = read_real(x, &kpath)?;
            }
            if let Some(missing) = values.iter().position(|x| x.is_nan()) {
                return Err(NswError::schema(
                    &tpath,
                    format!(
                        "missing key \"{}\"",
                        key_for(ItemSet::from_bits(missing as u64))
                    ),
                ));
            }
            Ok(Valuation::table(values))
        }
        other => Err(NswError::schema(
            format!("{path}.kind"),
            format!("unknown valuation kind \"{other}\""),
        )),
    }
}

fn parse_names(arr: &[Value], path: &str, name_of: impl Fn(&Value) -> Option<&str>) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(arr.len());
    for (k, v) in arr.iter().enumerate() {
        let p = format!("{path}[{k}]");
        let name = name_of(v).ok_or_else(|| NswError::schema(&p, "expected a name string"))?;
        if !seen.insert(name.to_string()) {
            return Err(NswError::schema(&p, format!("duplicate identifier \"{name}\"")));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

/// Parse and validate an instance document.
pub fn load_instance(text: &str) -> Result<Instance> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| NswError::schema("$", format!("invalid JSON: {e}")))?;
    let root = doc
        .as_object()
        .ok_or_else(|| NswError::schema("$", "expected an object"))?;
    let items = field(root, "items", "$")?
        .as_array()
        .ok_or_else(|| NswError::schema("$.items", "expected an array"))?;
    let item_names = parse_names(items, "$.items", Value::as_str)?;
    let agents = field(root, "agents", "$")?
        .as_array()
        .ok_or_else(|| NswError::schema("$.agents", "expected an array"))?;
    let agent_names = parse_names(agents, "$.agents", |a| a.get("name").and_then(Value::as_str))
        .map_err(|e| match e {
            NswError::Schema { path, message } if message == "expected a name string" => {
                NswError::schema(format!("{path}.name"), message)
            }
            other => other,
        })?;
    if item_names.is_empty() {
        return Err(NswError::schema("$.items", "at least one item required"));
    }
    if item_names.len() > MAX_ITEMS {
        return Err(NswError::schema(
            "$.items",
            format!("at most {MAX_ITEMS} items supported"),
        ));
    }
    let m = item_names.len();
    let valuations = agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let path = format!("$.agents[{i}]");
            let v = a
                .get("valuation")
                .ok_or_else(|| NswError::schema(&path, "missing field \"valuation\""))?;
            parse_valuation(v, &format!("{path}.valuation"), m)
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::new(agent_names, item_names, valuations)
}

fn valuation_json(v: &Valuation) -> Value {
    match v {
        Valuation::Additive { weights } => json!({"kind": "additive", "weights": weights}),
        Valuation::Xos { clauses } => json!({"kind": "xos", "clauses": clauses}),
        Valuation::BudgetedAdditive { weights, cap } => {
            json!({"kind": "budgeted_additive", "weights": weights, "cap": cap})
        }
        Valuation::Table { values, .. } => {
            let mut ordered: Vec<(ItemSet, f64)> = values
                .iter()
                .enumerate()
                .map(|(bits, &x)| (ItemSet::from_bits(bits as u64), x))
                .collect();
            ordered.sort_by(|a, b| a.0.canonical_cmp(b.0));
            let mut map = Map::new();
            for (s, x) in ordered {
                map.insert(key_for(s), json!(x));
            }
            json!({"kind": "table", "values": Value::Object(map)})
        }
    }
}

/// Canonical JSON form of an instance; `load_instance` inverts it.
pub fn instance_to_json(inst: &Instance) -> Value {
    let agents: Vec<Value> = inst
        .agent_names
        .iter()
        .zip(&inst.valuations)
        .map(|(name, v)| json!({"name": name, "valuation": valuation_json(v)}))
        .collect();
    json!({"agents": agents, "items": inst.item_names})
}

pub fn serialize_instance(inst: &Instance) -> String {
    serde_json::to_string_pretty(&instance_to_json(inst)).expect("instance serializes")
}

/// Named view of an allocation for reports.
pub fn named_bundles(alloc: &Allocation, inst: &Instance) -> BTreeMap<String, Vec<String>> {
    alloc
        .bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            (
                inst.agent_names[i].clone(),
                b.iter().map(|j| inst.item_names[j].clone()).collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "agents": [
            {"name": "alice", "valuation": {"kind": "additive", "weights": [1, 2]}},
            {"name": "bob", "valuation": {"kind": "additive", "weights": [2, 1]}}
        ],
        "items": ["a", "b"]
    }"#;

    #[test]
    fn loads_minimal_document() {
        let inst = load_instance(MINIMAL).unwrap();
        assert_eq!(inst.num_agents(), 2);
        assert_eq!(inst.num_items(), 2);
        assert_eq!(inst.value(0, ItemSet::full(2)), 3.0);
    }

    #[test]
    fn rejects_negative_weight_with_path() {
        let doc = MINIMAL.replace("[1, 2]", "[1, -1]");
        let err = load_instance(&doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("negative weight"), "{msg}");
        assert!(msg.contains("$.agents[0].valuation.weights[1]"), "{msg}");
    }

    #[test]
    fn rejects_duplicate_identifiers() {
        let doc = MINIMAL.replace("\"bob\"", "\"alice\"");
        let msg = load_instance(&doc).unwrap_err().to_string();
        assert!(msg.contains("duplicate identifier") && msg.contains("$.agents[1]"), "{msg}");
        let doc = MINIMAL.replace("[\"a\", \"b\"]", "[\"a\", \"a\"]");
        let msg = load_instance(&doc).unwrap_err().to_string();
        assert!(msg.contains("duplicate identifier") && msg.contains("$.items[1]"), "{msg}");
    }

    #[test]
    fn loads_xos_agent_with_three_clauses() {
        let doc = r#"{
            "agents": [
                {"name": "p", "valuation": {"kind": "additive", "weights": [1, 1, 1, 1]}},
                {"name": "q", "valuation": {"kind": "xos", "clauses": [[1,0,0,0],[0,2,0,1],[1,1,1,1]]}}
            ],
            "items": ["w", "x", "y", "z"]
        }"#;
        let inst = load_instance(doc).unwrap();
        match inst.valuation(1) {
            Valuation::Xos { clauses } => assert_eq!(clauses.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_requires_every_key() {
        let doc = r#"{
            "agents": [{"name": "t", "valuation": {"kind": "table", "values": {"0": 1, "1": 1}}}],
            "items": ["a", "b"]
        }"#;
        let msg = load_instance(doc).unwrap_err().to_string();
        assert!(msg.contains("missing key \"0,1\""), "{msg}");
    }

    #[test]
    fn nsw_examples() {
        let inst = Instance::from_valuations(
            2,
            vec![
                Valuation::additive(vec![4.0, 0.0]),
                Valuation::additive(vec![0.0, 9.0]),
            ],
        )
        .unwrap();
        let alloc = Allocation {
            bundles: vec![ItemSet::singleton(0), ItemSet::singleton(1)],
        };
        assert!((nsw_value(&alloc, &inst) - 6.0).abs() < 1e-12);
        let empty = Allocation {
            bundles: vec![ItemSet::full(2), ItemSet::EMPTY],
        };
        assert_eq!(nsw_value(&empty, &inst), 0.0);
    }

    #[test]
    fn nsw_three_agents_matches_log_sum() {
        let inst = Instance::from_valuations(
            3,
            vec![
                Valuation::additive(vec![1.0, 0.0, 0.0]),
                Valuation::additive(vec![0.0, 8.0, 0.0]),
                Valuation::additive(vec![0.0, 0.0, 27.0]),
            ],
        )
        .unwrap();
        let alloc = Allocation {
            bundles: (0..3).map(ItemSet::singleton).collect(),
        };
        // brute-force log-sum cross-check
        let expected = ((1f64.ln() + 8f64.ln() + 27f64.ln()) / 3.0).exp();
        assert!((nsw_value(&alloc, &inst) - 6.0).abs() < 1e-12);
        assert!((nsw_value(&alloc, &inst) - expected).abs() < 1e-12);
    }

    #[test]
    fn subsets_enumerates_all() {
        let u = ItemSet::from_items([1, 3, 4]);
        let all: Vec<_> = u.subsets().collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], ItemSet::EMPTY);
        assert_eq!(*all.last().unwrap(), u);
        assert!(all.iter().all(|s| s.is_subset(u)));
    }

    #[test]
    fn canonical_order() {
        let a = ItemSet::singleton(0);
        let b = ItemSet::singleton(1);
        assert_eq!(a.canonical_cmp(b), Ordering::Less);
        assert_eq!(ItemSet::EMPTY.canonical_cmp(a), Ordering::Less);
        assert_eq!(b.canonical_cmp(a.with(1)), Ordering::Less);
    }

    #[test]
    fn allocation_validation_catches_overlap() {
        let inst = Instance::from_valuations(
            2,
            vec![Valuation::additive(vec![1.0, 1.0]), Valuation::additive(vec![1.0, 1.0])],
        )
        .unwrap();
        let bad = Allocation {
            bundles: vec![ItemSet::full(2), ItemSet::singleton(0)],
        };
        assert!(bad.validate(&inst).is_err());
    }
}
