//! Minimal SMT-LIB2 front end.
//!
//! Extracts nullary declarations from an input script, resolves the set of
//! bitvector variables to project on, and renders hash constraints and
//! blocking clauses back into `(assert ...)` commands. The input formula
//! itself is never rewritten: everything we add is appended as a new
//! assertion on top of the original commands.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::hashgen::{HashConstraint, HashFamily, Slice};
use crate::oracle::BlockingClause;
use crate::sexpr::{self, SExpr};

/// Comment marker that names the projection set inside a script.
pub const PROJECTION_COMMENT: &str = "projected-vars:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmtError {
    #[error("malformed script at line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{name}` has sort {sort}; only bitvector variables can be projected")]
    NonDiscreteProjection { name: String, sort: String },
    #[error("projection set is empty")]
    EmptyProjection,
    #[error("variable `{0}` listed twice in the projection set")]
    DuplicateProjection(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sort {
    BitVec(u32),
    Other(String),
}

impl std::fmt::Display for Sort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sort::BitVec(w) => write!(f, "(_ BitVec {w})"),
            Sort::Other(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SortedVar {
    pub name: String,
    pub sort: Sort,
}

/// One top-level command of the input, kept as raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub head: String,
    pub text: String,
    pub line: usize,
    /// Option keyword for `set-option` commands.
    option: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmtScript {
    raw_text: String,
    declarations: Vec<SortedVar>,
    logic: Option<String>,
    projection_hint: Option<Vec<String>>,
    commands: Vec<Command>,
}

impl SmtScript {
    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn declarations(&self) -> &[SortedVar] {
        &self.declarations
    }

    pub fn logic(&self) -> Option<&str> {
        self.logic.as_deref()
    }

    pub fn declaration(&self, name: &str) -> Option<&SortedVar> {
        self.declarations.iter().find(|d| d.name == name)
    }

    /// Names listed in `; projected-vars: ...` comments, if any.
    pub fn projection_hint(&self) -> Option<&[String]> {
        self.projection_hint.as_deref()
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    /// The commands a counting session should replay into a solver before
    /// adding its own assertions. Queries, `exit`, and options that would
    /// desynchronize the response protocol are dropped.
    pub fn solver_prelude(&self) -> Vec<&str> {
        self.commands
            .iter()
            .filter(|c| {
                let dropped_head = matches!(
                    c.head.as_str(),
                    "check-sat"
                        | "check-sat-assuming"
                        | "get-model"
                        | "get-value"
                        | "get-assignment"
                        | "get-unsat-core"
                        | "get-unsat-assumptions"
                        | "get-proof"
                        | "get-info"
                        | "get-option"
                        | "get-assertions"
                        | "echo"
                        | "exit"
                );
                let dropped_option = matches!(
                    c.option.as_deref(),
                    Some(":print-success" | ":produce-models" | ":interactive-mode" | ":regular-output-channel")
                );
                !dropped_head && !dropped_option
            })
            .map(|c| c.text.as_str())
            .collect()
    }
}

/// Reads the declarations of a script without altering its text.
pub fn parse_declarations(script_text: &str) -> Result<SmtScript, SmtError> {
    let doc = sexpr::read_document(script_text).map_err(|e| SmtError::MalformedScript {
        line: e.line,
        message: e.message,
    })?;

    let mut declarations: Vec<SortedVar> = Vec::new();
    let mut seen = HashSet::new();
    let mut logic = None;
    let mut commands = Vec::with_capacity(doc.forms.len());

    for form in &doc.forms {
        let malformed = |message: String| SmtError::MalformedScript {
            line: form.line,
            message,
        };
        let items = form
            .expr
            .list()
            .ok_or_else(|| malformed(format!("expected a command, found `{}`", form.expr)))?;
        let head = form
            .expr
            .head()
            .ok_or_else(|| malformed("command without a head symbol".into()))?;
        let mut option = None;

        match head {
            "declare-const" => {
                let [_, name, sort] = items else {
                    return Err(malformed("declare-const expects a name and a sort".into()));
                };
                let var = declared_var(name, sort).map_err(malformed)?;
                push_unique(&mut declarations, &mut seen, var).map_err(malformed)?;
            }
            "declare-fun" => {
                let [_, name, args, sort] = items else {
                    return Err(malformed("declare-fun expects a name, argument sorts and a sort".into()));
                };
                let args = args
                    .list()
                    .ok_or_else(|| malformed("declare-fun argument sorts must be a list".into()))?;
                // Functions with arguments are terms, not projectable variables.
                if args.is_empty() {
                    let var = declared_var(name, sort).map_err(malformed)?;
                    push_unique(&mut declarations, &mut seen, var).map_err(malformed)?;
                }
            }
            "set-logic" => {
                logic = items.get(1).and_then(SExpr::atom).map(str::to_string);
            }
            "set-option" => {
                option = items.get(1).and_then(SExpr::atom).map(str::to_string);
            }
            _ => {}
        }

        commands.push(Command {
            head: head.to_string(),
            text: script_text[form.span.clone()].to_string(),
            line: form.line,
            option,
        });
    }

    let hint: Vec<String> = doc
        .comments
        .iter()
        .filter_map(|c| c.text.trim().strip_prefix(PROJECTION_COMMENT))
        .flat_map(|rest| rest.split_whitespace().map(str::to_string))
        .collect();

    Ok(SmtScript {
        raw_text: script_text.to_string(),
        declarations,
        logic,
        projection_hint: (!hint.is_empty()).then_some(hint),
        commands,
    })
}

fn push_unique(
    decls: &mut Vec<SortedVar>,
    seen: &mut HashSet<String>,
    var: SortedVar,
) -> Result<(), String> {
    if !seen.insert(var.name.clone()) {
        return Err(format!("`{}` is declared twice", var.name));
    }
    decls.push(var);
    Ok(())
}

fn declared_var(name: &SExpr, sort: &SExpr) -> Result<SortedVar, String> {
    let name = name
        .atom()
        .ok_or_else(|| format!("declaration name must be a symbol, found `{name}`"))?;
    Ok(SortedVar {
        name: name.to_string(),
        sort: parse_sort(sort)?,
    })
}

fn parse_sort(sort: &SExpr) -> Result<Sort, String> {
    if let Some([SExpr::Atom(u), SExpr::Atom(bv), SExpr::Atom(width)]) = sort.list() {
        if u == "_" && bv == "BitVec" {
            let width: u32 = width
                .parse()
                .map_err(|_| format!("bitvector width `{width}` is not a numeral"))?;
            if width == 0 {
                return Err("bitvector width must be at least 1".into());
            }
            return Ok(Sort::BitVec(width));
        }
    }
    Ok(Sort::Other(sort.to_string()))
}

/// A projected bitvector variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProjectionVar {
    pub name: String,
    pub width: u32,
}

/// Ordered, non-empty set of bitvector variables to count over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSet {
    vars: Vec<ProjectionVar>,
    total_width: u64,
}

impl ProjectionSet {
    /// Builds a projection set directly from `(name, width)` pairs.
    pub fn new(vars: Vec<ProjectionVar>) -> Result<Self, SmtError> {
        if vars.is_empty() {
            return Err(SmtError::EmptyProjection);
        }
        let mut seen = HashSet::new();
        for v in &vars {
            if !seen.insert(v.name.as_str()) {
                return Err(SmtError::DuplicateProjection(v.name.clone()));
            }
            if v.width == 0 {
                return Err(SmtError::NonDiscreteProjection {
                    name: v.name.clone(),
                    sort: "(_ BitVec 0)".into(),
                });
            }
        }
        let total_width = vars.iter().map(|v| u64::from(v.width)).sum();
        Ok(ProjectionSet { vars, total_width })
    }

    /// Shorthand for a single variable.
    pub fn single(name: &str, width: u32) -> Result<Self, SmtError> {
        Self::new(vec![ProjectionVar {
            name: name.to_string(),
            width,
        }])
    }

    pub fn vars(&self) -> &[ProjectionVar] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn total_width(&self) -> u64 {
        self.total_width
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }
}

/// Resolves `names` against the script's declarations, keeping their order.
pub fn resolve_projection(script: &SmtScript, names: &[String]) -> Result<ProjectionSet, SmtError> {
    let vars = names
        .iter()
        .map(|name| {
            let decl = script
                .declaration(name)
                .ok_or_else(|| SmtError::UnknownVariable(name.clone()))?;
            match &decl.sort {
                Sort::BitVec(width) => Ok(ProjectionVar {
                    name: name.clone(),
                    width: *width,
                }),
                other => Err(SmtError::NonDiscreteProjection {
                    name: name.clone(),
                    sort: other.to_string(),
                }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ProjectionSet::new(vars)
}

/// Parses a sidecar projection file: one name per line, `#` starts a comment.
pub fn parse_projection_file(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .flat_map(|line| line.split_whitespace().map(str::to_string))
        .collect()
}

/// A constraint the counter adds on top of the input formula.
#[derive(Debug, Clone, Copy)]
pub enum Assertion<'a> {
    Hash(&'a HashConstraint),
    Block(&'a BlockingClause),
}

/// Renders one `(assert ...)` command using only QF_BV operators and
/// binary literals.
pub fn render_assertion(assertion: Assertion<'_>, projection: &ProjectionSet) -> String {
    let body = match assertion {
        Assertion::Hash(h) => render_hash(h, projection),
        Assertion::Block(b) => render_block(b, projection),
    };
    format!("(assert {body})")
}

pub(crate) fn bin_literal(value: u64, width: u32) -> String {
    debug_assert!(width >= 64 || value >> width == 0, "{value} does not fit {width} bits");
    format!("#b{:0w$b}", value, w = width as usize)
}

fn big_bin_literal(value: &BigUint, width: u32) -> String {
    format!("#b{:0w$b}", value, w = width as usize)
}

fn render_slice(slice: &Slice, projection: &ProjectionSet) -> String {
    let var = &projection.vars()[slice.var];
    if slice.lo == 0 && slice.hi == var.width {
        var.name.clone()
    } else {
        format!("((_ extract {} {}) {})", slice.hi - 1, slice.lo, var.name)
    }
}

fn render_hash(h: &HashConstraint, projection: &ProjectionSet) -> String {
    match h.family {
        HashFamily::Xor => {
            let bits: Vec<String> = h
                .slices
                .iter()
                .zip(&h.coefficients)
                .filter(|(_, &a)| a == 1)
                .map(|(s, _)| format!("((_ extract {} {}) {})", s.lo, s.lo, projection.vars()[s.var].name))
                .collect();
            let lhs = match bits.len() {
                0 => "#b0".to_string(),
                1 => bits[0].clone(),
                _ => format!("(bvxor {})", bits.join(" ")),
            };
            format!("(= {lhs} {})", bin_literal(h.target, 1))
        }
        HashFamily::Prime | HashFamily::Shift => {
            let wide = h.widened_width.expect("word-level hash carries a widened width");
            let mut sum = String::from("(bvadd");
            for (slice, &a) in h.slices.iter().zip(&h.coefficients) {
                let operand = render_slice(slice, projection);
                let extend = wide - slice.width();
                let operand = if extend == 0 {
                    operand
                } else {
                    format!("((_ zero_extend {extend}) {operand})")
                };
                let _ = write!(sum, " (bvmul {} {operand})", bin_literal(a, wide));
            }
            let _ = write!(sum, " {})", bin_literal(h.offset.unwrap_or(0), wide));
            match h.family {
                HashFamily::Prime => format!(
                    "(= (bvurem {sum} {}) {})",
                    bin_literal(h.range, wide),
                    bin_literal(h.target, wide)
                ),
                _ => format!(
                    "(= ((_ extract {} {}) {sum}) {})",
                    wide - 1,
                    wide - h.exponent,
                    bin_literal(h.target, h.exponent)
                ),
            }
        }
    }
}

fn render_block(block: &BlockingClause, projection: &ProjectionSet) -> String {
    let eqs: Vec<String> = projection
        .vars()
        .iter()
        .zip(block.model.values())
        .map(|(var, value)| format!("(= {} {})", var.name, big_bin_literal(value, var.width)))
        .collect();
    if eqs.len() == 1 {
        format!("(not {})", eqs[0])
    } else {
        format!("(not (and {}))", eqs.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ProjectedModel;

    #[test]
    fn bitvec_declaration() {
        let s = parse_declarations("(declare-const x (_ BitVec 8))").unwrap();
        assert_eq!(
            s.declarations(),
            &[SortedVar {
                name: "x".into(),
                sort: Sort::BitVec(8)
            }]
        );
    }

    #[test]
    fn mixed_declarations_keep_order() {
        let s = parse_declarations("(declare-fun y () Float32)(declare-const x (_ BitVec 4))").unwrap();
        assert_eq!(
            s.declarations(),
            &[
                SortedVar {
                    name: "y".into(),
                    sort: Sort::Other("Float32".into())
                },
                SortedVar {
                    name: "x".into(),
                    sort: Sort::BitVec(4)
                },
            ]
        );
    }

    #[test]
    fn zero_width_is_malformed() {
        let err = parse_declarations("(declare-const x (_ BitVec 0))").unwrap_err();
        assert!(matches!(err, SmtError::MalformedScript { line: 1, .. }));
    }

    #[test]
    fn unbalanced_is_malformed_with_line() {
        let err = parse_declarations("(set-logic QF_BV)\n(declare-const x (_ BitVec 4)\n").unwrap_err();
        assert!(matches!(err, SmtError::MalformedScript { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_declaration_is_malformed() {
        let err = parse_declarations("(declare-const x Bool)\n(declare-fun x () Bool)").unwrap_err();
        assert!(matches!(err, SmtError::MalformedScript { line: 2, .. }));
    }

    #[test]
    fn functions_with_arguments_are_skipped() {
        let s = parse_declarations("(declare-fun f ((_ BitVec 4)) (_ BitVec 4))(declare-fun x () (_ BitVec 2))").unwrap();
        assert_eq!(s.declarations().len(), 1);
        assert_eq!(s.declarations()[0].name, "x");
    }

    #[test]
    fn logic_and_hint_are_read() {
        let s = parse_declarations(
            "; projected-vars: x y\n(set-logic QF_BVFP)\n(declare-const x (_ BitVec 4))\n(declare-const y (_ BitVec 4))",
        )
        .unwrap();
        assert_eq!(s.logic(), Some("QF_BVFP"));
        assert_eq!(s.projection_hint(), Some(&["x".to_string(), "y".to_string()][..]));
    }

    #[test]
    fn prelude_drops_queries_and_protocol_options() {
        let s = parse_declarations(
            "(set-option :print-success false)(set-option :random-seed 3)(set-logic QF_BV)(declare-const x (_ BitVec 4))(assert true)(check-sat)(get-model)(exit)",
        )
        .unwrap();
        assert_eq!(
            s.solver_prelude(),
            vec![
                "(set-option :random-seed 3)",
                "(set-logic QF_BV)",
                "(declare-const x (_ BitVec 4))",
                "(assert true)"
            ]
        );
    }

    fn script() -> SmtScript {
        parse_declarations("(declare-const x (_ BitVec 8))(declare-const r Real)(declare-const z (_ BitVec 2))").unwrap()
    }

    #[test]
    fn resolve_in_caller_order() {
        let p = resolve_projection(&script(), &["z".into(), "x".into()]).unwrap();
        assert_eq!(p.vars()[0].name, "z");
        assert_eq!(p.total_width(), 10);
        let p = resolve_projection(&script(), &["x".into()]).unwrap();
        assert_eq!(p.total_width(), 8);
    }

    #[test]
    fn resolve_errors() {
        assert_eq!(
            resolve_projection(&script(), &["w".into()]),
            Err(SmtError::UnknownVariable("w".into()))
        );
        assert!(matches!(
            resolve_projection(&script(), &["r".into()]),
            Err(SmtError::NonDiscreteProjection { .. })
        ));
        assert_eq!(resolve_projection(&script(), &[]), Err(SmtError::EmptyProjection));
        assert_eq!(
            resolve_projection(&script(), &["x".into(), "x".into()]),
            Err(SmtError::DuplicateProjection("x".into()))
        );
    }

    #[test]
    fn sidecar_file() {
        assert_eq!(
            parse_projection_file("# header\nx\n  y # trailing\n\nz w\n"),
            vec!["x", "y", "z", "w"]
        );
    }

    #[test]
    fn render_xor() {
        let p = ProjectionSet::single("x", 3).unwrap();
        let h = HashConstraint::xor(&p, vec![1, 0, 1], 1);
        assert_eq!(
            render_assertion(Assertion::Hash(&h), &p),
            "(assert (= (bvxor ((_ extract 0 0) x) ((_ extract 2 2) x)) #b1))"
        );
        let h = HashConstraint::xor(&p, vec![0, 0, 0], 0);
        assert_eq!(render_assertion(Assertion::Hash(&h), &p), "(assert (= #b0 #b0))");
    }

    #[test]
    fn render_block() {
        let p = ProjectionSet::single("x", 4).unwrap();
        let b = BlockingClause::new(ProjectedModel::new(vec![5u32.into()]));
        assert_eq!(render_assertion(Assertion::Block(&b), &p), "(assert (not (= x #b0101)))");
        let p = ProjectionSet::new(vec![
            ProjectionVar { name: "x".into(), width: 2 },
            ProjectionVar { name: "y".into(), width: 3 },
        ])
        .unwrap();
        let b = BlockingClause::new(ProjectedModel::new(vec![1u32.into(), 6u32.into()]));
        assert_eq!(
            render_assertion(Assertion::Block(&b), &p),
            "(assert (not (and (= x #b01) (= y #b110))))"
        );
    }

    #[test]
    fn render_prime_widens() {
        let p = ProjectionSet::single("x", 4).unwrap();
        let h = HashConstraint::prime(&p, 4, 17, vec![3], 2, 6);
        // w̄ = 2·4 + 1 = 9
        assert_eq!(
            render_assertion(Assertion::Hash(&h), &p),
            "(assert (= (bvurem (bvadd (bvmul #b000000011 ((_ zero_extend 5) x)) #b000000010) #b000010001) #b000000110))"
        );
    }

    #[test]
    fn render_shift_extracts_top_bits() {
        let p = ProjectionSet::single("x", 8).unwrap();
        let h = HashConstraint::shift(&p, 4, vec![5, 7], 3, 2);
        assert_eq!(
            render_assertion(Assertion::Hash(&h), &p),
            "(assert (= ((_ extract 7 4) (bvadd (bvmul #b00000101 ((_ zero_extend 4) ((_ extract 3 0) x))) (bvmul #b00000111 ((_ zero_extend 4) ((_ extract 7 4) x))) #b00000011)) #b0010))"
        );
    }
}
