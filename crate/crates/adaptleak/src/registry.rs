//! Adaptation registry: which observable settings a context-aware system
//! drives, and for which context sources.
//!
//! The registry file is a strict XML subset (see [`parse_registry`]); parsing
//! it yields a [`Registry`] from which the detection-side structures are
//! derived: one protection list per rule and one subset-indexed mutual
//! information table per rule.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on actions per rule; the subset table has `2^n - 1` rows.
pub const MAX_ACTIONS_PER_RULE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("malformed registry document: {0}")]
    MalformedDocument(String),
    #[error("adaptation {0} has an empty context list")]
    EmptyContextList(usize),
    #[error("adaptation {0} has an empty action list")]
    EmptyActionList(usize),
    #[error("action `{0}` appears in more than one adaptation")]
    DuplicateActionAcrossRules(MethodId),
    #[error("method `{0}` is listed as both context and action in adaptation {1}")]
    ContextActionOverlap(MethodId, usize),
    #[error("adaptation {rule_id} has {actions} actions, cap is {cap}")]
    TooManyActions {
        rule_id: usize,
        actions: usize,
        cap: usize,
    },
}

/// Name of one observable setting (a getter/setter pair, e.g. `RingerMode`).
///
/// Valid names match `[A-Za-z][A-Za-z0-9_]*`. The same name always denotes
/// the same setting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MethodId(String);

impl MethodId {
    pub fn new(name: &str) -> Result<Self, RegistryError> {
        if is_valid_token(name) {
            Ok(MethodId(name.to_string()))
        } else {
            Err(RegistryError::MalformedDocument(format!(
                "invalid method name `{name}`"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_valid_token(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One context -> actions mapping, parsed from one `adaptation` element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationRule {
    pub rule_id: usize,
    pub contexts: Vec<MethodId>,
    pub actions: Vec<MethodId>,
}

impl AdaptationRule {
    pub fn action_set(&self) -> BTreeSet<MethodId> {
        self.actions.iter().cloned().collect()
    }
}

/// A validated set of adaptation rules.
///
/// Invariants: rule ids are unique and dense from 0; context and action
/// lists are non-empty and disjoint within a rule; within each list a method
/// appears once; an action belongs to at most one rule. Context sources may
/// be shared across rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryRepr", into = "RegistryRepr")]
pub struct Registry {
    rules: Vec<AdaptationRule>,
}

#[derive(Serialize, Deserialize)]
struct RegistryRepr {
    rules: Vec<AdaptationRule>,
}

impl TryFrom<RegistryRepr> for Registry {
    type Error = RegistryError;
    fn try_from(repr: RegistryRepr) -> Result<Self, Self::Error> {
        Registry::new(repr.rules)
    }
}

impl From<Registry> for RegistryRepr {
    fn from(reg: Registry) -> Self {
        RegistryRepr { rules: reg.rules }
    }
}

impl Registry {
    pub fn new(rules: Vec<AdaptationRule>) -> Result<Self, RegistryError> {
        let mut seen_ids = BTreeSet::new();
        let mut seen_actions: BTreeSet<&MethodId> = BTreeSet::new();
        for rule in &rules {
            if !seen_ids.insert(rule.rule_id) {
                return Err(RegistryError::MalformedDocument(format!(
                    "duplicate rule id {}",
                    rule.rule_id
                )));
            }
            if rule.contexts.is_empty() {
                return Err(RegistryError::EmptyContextList(rule.rule_id));
            }
            if rule.actions.is_empty() {
                return Err(RegistryError::EmptyActionList(rule.rule_id));
            }
            let mut in_rule = BTreeSet::new();
            for m in &rule.contexts {
                if !in_rule.insert(m) {
                    return Err(RegistryError::MalformedDocument(format!(
                        "method `{m}` listed twice in contexts of adaptation {}",
                        rule.rule_id
                    )));
                }
            }
            let mut action_set = BTreeSet::new();
            for m in &rule.actions {
                if !action_set.insert(m) {
                    return Err(RegistryError::MalformedDocument(format!(
                        "method `{m}` listed twice in actions of adaptation {}",
                        rule.rule_id
                    )));
                }
                if in_rule.contains(m) {
                    return Err(RegistryError::ContextActionOverlap(
                        m.clone(),
                        rule.rule_id,
                    ));
                }
                if !seen_actions.insert(m) {
                    return Err(RegistryError::DuplicateActionAcrossRules(m.clone()));
                }
            }
        }
        for id in 0..rules.len() {
            if !seen_ids.contains(&id) {
                return Err(RegistryError::MalformedDocument(format!(
                    "rule ids not dense: missing {id}"
                )));
            }
        }
        Ok(Registry { rules })
    }

    /// Rules in document order.
    pub fn rules(&self) -> &[AdaptationRule] {
        &self.rules
    }

    pub fn rule(&self, rule_id: usize) -> Option<&AdaptationRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Per rule, the set of action getters whose reads are mediated and scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionLists {
    /// Indexed by rule id.
    lists: Vec<BTreeSet<MethodId>>,
}

impl ProtectionLists {
    pub fn actions_for(&self, rule_id: usize) -> Option<&BTreeSet<MethodId>> {
        self.lists.get(rule_id)
    }

    pub fn is_protected(&self, rule_id: usize, action: &MethodId) -> bool {
        self.actions_for(rule_id).is_some_and(|l| l.contains(action))
    }

    /// The rule owning an action getter, if any. Unique by registry invariant.
    pub fn owner(&self, action: &MethodId) -> Option<usize> {
        self.lists.iter().position(|l| l.contains(action))
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Per rule, normalized mutual information for every non-empty subset of
/// that rule's actions. Subsets are bitmasks over the rule's action order;
/// entry for mask `m` lives at index `m - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiTables {
    pub rules: Vec<MiTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiTable {
    pub rule_id: usize,
    pub actions: Vec<MethodId>,
    values: Vec<f64>,
}

impl MiTable {
    pub fn subset_count(&self) -> usize {
        self.values.len()
    }

    pub fn bit_of(&self, action: &MethodId) -> Option<u32> {
        self.actions.iter().position(|a| a == action).map(|i| i as u32)
    }

    pub fn get(&self, mask: u32) -> f64 {
        assert!(mask >= 1 && (mask as usize) <= self.values.len(), "bad subset mask");
        self.values[mask as usize - 1]
    }

    pub fn set(&mut self, mask: u32, value: f64) {
        assert!(mask >= 1 && (mask as usize) <= self.values.len(), "bad subset mask");
        self.values[mask as usize - 1] = value;
    }

    /// Action names selected by a subset mask, in table order.
    pub fn mask_actions(&self, mask: u32) -> Vec<MethodId> {
        self.actions
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, a)| a.clone())
            .collect()
    }

    /// JSON dump with each subset encoded as its sorted action-name list.
    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = (1..=self.values.len() as u32)
            .map(|mask| {
                let mut names: Vec<String> = self
                    .mask_actions(mask)
                    .iter()
                    .map(|a| a.as_str().to_string())
                    .collect();
                names.sort();
                serde_json::json!({ "actions": names, "score": self.get(mask) })
            })
            .collect();
        serde_json::json!({ "rule": self.rule_id, "entries": entries })
    }
}

impl MiTables {
    pub fn table(&self, rule_id: usize) -> Option<&MiTable> {
        self.rules.iter().find(|t| t.rule_id == rule_id)
    }

    pub fn table_mut(&mut self, rule_id: usize) -> Option<&mut MiTable> {
        self.rules.iter_mut().find(|t| t.rule_id == rule_id)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.rules.iter().map(|t| t.to_json()).collect())
    }
}

/// Parse a registry file. The grammar is a strict XML subset:
///
/// ```text
/// <registry>
///   <adaptation id="INT">
///     <context> <method>NAME</method>+ </context>
///     <action> <method>NAME</method>+ </action>
///   </adaptation>+
/// </registry>
/// ```
///
/// Whitespace between elements is ignored; the only attribute accepted is
/// `id` on `adaptation`, and it is optional (absent ids are assigned from
/// document order).
pub fn parse_registry(text: &str) -> Result<Registry, RegistryError> {
    Parser::new(text).document()
}

/// Serialize a registry so that `parse_registry` reproduces it exactly.
pub fn serialize_registry(reg: &Registry) -> String {
    let mut out = String::from("<registry>\n");
    for rule in reg.rules() {
        out.push_str(&format!("  <adaptation id=\"{}\">\n", rule.rule_id));
        out.push_str("    <context>\n");
        for m in &rule.contexts {
            out.push_str(&format!("      <method>{m}</method>\n"));
        }
        out.push_str("    </context>\n");
        out.push_str("    <action>\n");
        for m in &rule.actions {
            out.push_str(&format!("      <method>{m}</method>\n"));
        }
        out.push_str("    </action>\n");
        out.push_str("  </adaptation>\n");
    }
    out.push_str("</registry>\n");
    out
}

/// One protection list per rule, holding exactly that rule's action set.
pub fn build_protection_lists(reg: &Registry) -> ProtectionLists {
    let mut lists = vec![BTreeSet::new(); reg.len()];
    for rule in reg.rules() {
        lists[rule.rule_id] = rule.action_set();
    }
    ProtectionLists { lists }
}

/// All-zero subset tables, one row per non-empty action subset per rule.
pub fn init_mi_tables(reg: &Registry, max_actions_per_rule: usize) -> Result<MiTables, RegistryError> {
    let mut rules = Vec::with_capacity(reg.len());
    for rule in reg.rules() {
        let n = rule.actions.len();
        if n > max_actions_per_rule {
            return Err(RegistryError::TooManyActions {
                rule_id: rule.rule_id,
                actions: n,
                cap: max_actions_per_rule,
            });
        }
        rules.push(MiTable {
            rule_id: rule.rule_id,
            actions: rule.actions.clone(),
            values: vec![0.0; (1usize << n) - 1],
        });
    }
    rules.sort_by_key(|t| t.rule_id);
    Ok(MiTables { rules })
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { text, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> RegistryError {
        RegistryError::MalformedDocument(format!("{} at byte {}", msg.into(), self.pos))
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), RegistryError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{lit}`")))
        }
    }

    fn document(&mut self) -> Result<Registry, RegistryError> {
        self.skip_ws();
        self.expect("<registry>")?;
        let mut rules = Vec::new();
        loop {
            self.skip_ws();
            if self.eat("</registry>") {
                break;
            }
            rules.push(self.adaptation(rules.len())?);
        }
        self.skip_ws();
        if !self.rest().is_empty() {
            return Err(self.err("trailing content after </registry>"));
        }
        if rules.is_empty() {
            return Err(self.err("registry has no adaptation elements"));
        }
        Registry::new(rules)
    }

    fn adaptation(&mut self, doc_index: usize) -> Result<AdaptationRule, RegistryError> {
        self.expect("<adaptation")?;
        let rule_id = match self.attributes()? {
            Some(id) => id,
            None => doc_index,
        };
        let contexts = self.method_list("context")?;
        let actions = self.method_list("action")?;
        self.skip_ws();
        self.expect("</adaptation>")?;
        Ok(AdaptationRule {
            rule_id,
            contexts,
            actions,
        })
    }

    /// Attributes of an `adaptation` open tag; only `id` is allowed.
    fn attributes(&mut self) -> Result<Option<usize>, RegistryError> {
        let mut id = None;
        loop {
            self.skip_ws();
            if self.eat(">") {
                return Ok(id);
            }
            let name = self.token()?;
            if name != "id" {
                return Err(self.err(format!("unexpected attribute `{name}`")));
            }
            if id.is_some() {
                return Err(self.err("duplicate `id` attribute"));
            }
            self.skip_ws();
            self.expect("=")?;
            self.skip_ws();
            self.expect("\"")?;
            let digits_start = self.pos;
            while self.rest().starts_with(|c: char| c.is_ascii_digit()) {
                self.pos += 1;
            }
            let digits = &self.text[digits_start..self.pos];
            self.expect("\"")?;
            let value: usize = digits
                .parse()
                .map_err(|_| self.err("`id` is not a non-negative integer"))?;
            id = Some(value);
        }
    }

    fn method_list(&mut self, tag: &str) -> Result<Vec<MethodId>, RegistryError> {
        self.skip_ws();
        self.expect(&format!("<{tag}>"))?;
        let mut methods = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(&format!("</{tag}>")) {
                break;
            }
            self.expect("<method>")?;
            let name = self.token()?;
            self.skip_ws();
            self.expect("</method>")?;
            methods.push(MethodId::new(&name)?);
        }
        Ok(methods)
    }

    fn token(&mut self) -> Result<String, RegistryError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .rest()
            .starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a name"));
        }
        Ok(self.text[start..self.pos].to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The two-rule example: GPS drives ringer settings; three sources drive
    /// camera settings.
    pub(crate) const TWO_RULE_FILE: &str = r#"
<registry>
  <adaptation id="0">
    <context>
      <method>GpsLocation</method>
    </context>
    <action>
      <method>RingerMode</method>
      <method>AlarmVolume</method>
    </action>
  </adaptation>
  <adaptation id="1">
    <context>
      <method>BatteryLevel</method>
      <method>GpsLocation</method>
      <method>TransportMode</method>
    </context>
    <action>
      <method>CameraFocus</method>
      <method>CameraFlash</method>
      <method>CameraResolution</method>
    </action>
  </adaptation>
</registry>
"#;

    fn m(s: &str) -> MethodId {
        MethodId::new(s).unwrap()
    }

    #[test]
    fn parses_two_rule_file() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.rules()[0].contexts.len(), 1);
        assert_eq!(reg.rules()[0].actions.len(), 2);
        assert_eq!(reg.rules()[1].contexts.len(), 3);
        assert_eq!(reg.rules()[1].actions.len(), 3);
    }

    #[test]
    fn parses_minimal_file() {
        let reg = parse_registry(
            "<registry><adaptation><context><method>A</method></context>\
             <action><method>B</method></action></adaptation></registry>",
        )
        .unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.rules()[0].rule_id, 0);
    }

    #[test]
    fn duplicate_action_across_rules_rejected() {
        let text = "<registry>\
            <adaptation><context><method>A</method></context><action><method>RingerMode</method></action></adaptation>\
            <adaptation><context><method>B</method></context><action><method>RingerMode</method></action></adaptation>\
            </registry>";
        assert!(matches!(
            parse_registry(text),
            Err(RegistryError::DuplicateActionAcrossRules(_))
        ));
    }

    #[test]
    fn context_action_overlap_rejected() {
        let text = "<registry><adaptation><context><method>A</method></context>\
                    <action><method>A</method></action></adaptation></registry>";
        assert!(matches!(
            parse_registry(text),
            Err(RegistryError::ContextActionOverlap(_, 0))
        ));
    }

    #[test]
    fn empty_lists_rejected() {
        let no_ctx = "<registry><adaptation><context></context>\
                      <action><method>A</method></action></adaptation></registry>";
        assert!(matches!(
            parse_registry(no_ctx),
            Err(RegistryError::EmptyContextList(0))
        ));
        let no_act = "<registry><adaptation><context><method>A</method></context>\
                      <action></action></adaptation></registry>";
        assert!(matches!(
            parse_registry(no_act),
            Err(RegistryError::EmptyActionList(0))
        ));
    }

    #[test]
    fn unknown_attribute_rejected() {
        let text = "<registry><adaptation name=\"x\"><context><method>A</method></context>\
                    <action><method>B</method></action></adaptation></registry>";
        assert!(matches!(
            parse_registry(text),
            Err(RegistryError::MalformedDocument(_))
        ));
    }

    #[test]
    fn ids_assigned_by_document_order_when_absent() {
        let text = "<registry>\
            <adaptation><context><method>A</method></context><action><method>B</method></action></adaptation>\
            <adaptation><context><method>C</method></context><action><method>D</method></action></adaptation>\
            </registry>";
        let reg = parse_registry(text).unwrap();
        assert_eq!(reg.rules()[0].rule_id, 0);
        assert_eq!(reg.rules()[1].rule_id, 1);
    }

    #[test]
    fn non_dense_ids_rejected() {
        let text = "<registry><adaptation id=\"3\"><context><method>A</method></context>\
                    <action><method>B</method></action></adaptation></registry>";
        assert!(matches!(
            parse_registry(text),
            Err(RegistryError::MalformedDocument(_))
        ));
    }

    #[test]
    fn two_rule_file_round_trips() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        let text = serialize_registry(&reg);
        let reparsed = parse_registry(&text).unwrap();
        assert_eq!(reg, reparsed);
        // serializing again is bit-stable
        assert_eq!(text, serialize_registry(&reparsed));
    }

    #[test]
    fn single_rule_serializes_one_adaptation() {
        let reg = Registry::new(vec![AdaptationRule {
            rule_id: 0,
            contexts: vec![m("A")],
            actions: vec![m("B")],
        }])
        .unwrap();
        let text = serialize_registry(&reg);
        assert_eq!(text.matches("<adaptation").count(), 1);
    }

    #[test]
    fn empty_action_rule_cannot_be_constructed() {
        let err = Registry::new(vec![AdaptationRule {
            rule_id: 0,
            contexts: vec![m("A")],
            actions: vec![],
        }])
        .unwrap_err();
        assert_eq!(err, RegistryError::EmptyActionList(0));
    }

    #[test]
    fn protection_lists_match_action_sets() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        let lists = build_protection_lists(&reg);
        assert_eq!(lists.len(), 2);
        assert_eq!(
            lists.actions_for(0).unwrap(),
            &[m("RingerMode"), m("AlarmVolume")].into_iter().collect()
        );
        assert_eq!(lists.actions_for(1).unwrap().len(), 3);
        assert_eq!(lists.owner(&m("CameraFlash")), Some(1));
        assert_eq!(lists.owner(&m("GpsLocation")), None);
    }

    #[test]
    fn protection_lists_partition_actions() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        let lists = build_protection_lists(&reg);
        let l0 = lists.actions_for(0).unwrap();
        let l1 = lists.actions_for(1).unwrap();
        assert!(l0.is_disjoint(l1));
        assert_eq!(l0.len() + l1.len(), 5);
    }

    #[test]
    fn singleton_rule_gets_singleton_list() {
        let reg = parse_registry(
            "<registry><adaptation><context><method>A</method></context>\
             <action><method>B</method></action></adaptation></registry>",
        )
        .unwrap();
        let lists = build_protection_lists(&reg);
        assert_eq!(lists.actions_for(0).unwrap().len(), 1);
    }

    #[test]
    fn mi_table_row_counts() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        let tables = init_mi_tables(&reg, MAX_ACTIONS_PER_RULE).unwrap();
        assert_eq!(tables.table(0).unwrap().subset_count(), 3); // 2^2 - 1
        assert_eq!(tables.table(1).unwrap().subset_count(), 7); // 2^3 - 1
        assert!((1..=3).all(|mask| tables.table(0).unwrap().get(mask) == 0.0));
    }

    #[test]
    fn mi_table_twelve_actions() {
        let actions: Vec<MethodId> = (0..12).map(|i| m(&format!("S{i}"))).collect();
        let reg = Registry::new(vec![AdaptationRule {
            rule_id: 0,
            contexts: vec![m("Ctx")],
            actions,
        }])
        .unwrap();
        let tables = init_mi_tables(&reg, MAX_ACTIONS_PER_RULE).unwrap();
        assert_eq!(tables.table(0).unwrap().subset_count(), 4095);
    }

    #[test]
    fn mi_table_cap_enforced() {
        let actions: Vec<MethodId> = (0..20).map(|i| m(&format!("S{i}"))).collect();
        let reg = Registry::new(vec![AdaptationRule {
            rule_id: 0,
            contexts: vec![m("Ctx")],
            actions,
        }])
        .unwrap();
        assert!(matches!(
            init_mi_tables(&reg, 16),
            Err(RegistryError::TooManyActions { actions: 20, cap: 16, .. })
        ));
    }

    mod roundtrip_props {
        use super::*;
        use proptest::prelude::*;

        /// Valid registries: unique tokens partitioned into per-rule action
        /// lists plus shared context pools.
        fn arb_registry() -> impl Strategy<Value = Registry> {
            (1usize..=4, 1usize..=3).prop_flat_map(|(n_rules, max_actions)| {
                let names: Vec<String> = (0..n_rules * (max_actions + 2))
                    .map(|i| format!("M{i}"))
                    .collect();
                let ctx_pool: Vec<String> = (0..3).map(|i| format!("Ctx{i}")).collect();
                let per_rule = max_actions;
                (
                    proptest::collection::vec(1usize..=per_rule, n_rules),
                    proptest::collection::vec(proptest::sample::subsequence(ctx_pool, 1..=3), n_rules),
                )
                    .prop_map(move |(action_counts, contexts)| {
                        let mut next = 0;
                        let rules = action_counts
                            .iter()
                            .zip(contexts)
                            .enumerate()
                            .map(|(rule_id, (&count, ctxs))| {
                                let actions: Vec<MethodId> = (0..count)
                                    .map(|_| {
                                        let a = MethodId::new(&names[next]).unwrap();
                                        next += 1;
                                        a
                                    })
                                    .collect();
                                AdaptationRule {
                                    rule_id,
                                    contexts: ctxs
                                        .iter()
                                        .map(|c| MethodId::new(c).unwrap())
                                        .collect(),
                                    actions,
                                }
                            })
                            .collect();
                        Registry::new(rules).expect("generated registry is valid")
                    })
            })
        }

        proptest! {
            #[test]
            fn parse_serialize_is_identity(reg in arb_registry()) {
                let text = serialize_registry(&reg);
                let back = parse_registry(&text).unwrap();
                prop_assert_eq!(&back, &reg);
                prop_assert_eq!(serialize_registry(&back), text);
            }

            #[test]
            fn protection_lists_partition_action_union(reg in arb_registry()) {
                let lists = build_protection_lists(&reg);
                let mut seen = BTreeSet::new();
                for rule in reg.rules() {
                    for a in lists.actions_for(rule.rule_id).unwrap() {
                        prop_assert!(seen.insert(a.clone()), "{a} owned twice");
                    }
                }
                let union: BTreeSet<MethodId> = reg
                    .rules()
                    .iter()
                    .flat_map(|r| r.actions.iter().cloned())
                    .collect();
                prop_assert_eq!(seen, union);
            }
        }
    }

    #[test]
    fn mask_actions_sorted_in_json() {
        let reg = parse_registry(TWO_RULE_FILE).unwrap();
        let tables = init_mi_tables(&reg, 16).unwrap();
        let json = tables.table(0).unwrap().to_json();
        let entries = json["entries"].as_array().unwrap();
        assert_eq!(entries.len(), 3);
        let both = &entries[2]["actions"];
        assert_eq!(both[0], "AlarmVolume");
        assert_eq!(both[1], "RingerMode");
    }
}
