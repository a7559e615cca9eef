//! Name resolution, type checking and lowering of expressions.

use std::cmp::Ordering;

use super::agg::Agg;
use super::DeployError;
use crate::epl::ast::{CompareOp, Expr, FieldRef, Literal, SelectItem};
use crate::event::{FieldType, Value};

/// Field layout of a stream; rows carry values in this order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StreamType {
    pub fields: Vec<(String, FieldType)>,
}

impl StreamType {
    pub fn index_of(&self, field: &str) -> Option<usize> {
        self.fields.iter().position(|(n, _)| n == field)
    }

    /// Same field names and types, in any order.
    pub fn same_shape(&self, other: &StreamType) -> bool {
        self.fields.len() == other.fields.len()
            && self
                .fields
                .iter()
                .all(|(n, t)| other.index_of(n).map(|i| other.fields[i].1) == Some(*t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CExpr {
    Field(usize),
    Lit(Value),
    Avg(usize),
    Count,
    Cmp(CompareOp, Box<CExpr>, Box<CExpr>),
    And(Box<CExpr>, Box<CExpr>),
    Or(Box<CExpr>, Box<CExpr>),
    Not(Box<CExpr>),
}

impl CExpr {
    /// Evaluates against one row; `agg` must be present when the expression
    /// contains aggregates.
    pub fn eval(&self, row: &[Value], agg: Option<&Agg>) -> Value {
        match self {
            CExpr::Field(i) => row[*i].clone(),
            CExpr::Lit(v) => v.clone(),
            CExpr::Avg(slot) => Value::Double(agg.expect("aggregate state").avg(*slot)),
            CExpr::Count => Value::Integer(agg.expect("aggregate state").count as i64),
            CExpr::Cmp(op, a, b) => Value::Boolean(compare(*op, &a.eval(row, agg), &b.eval(row, agg))),
            CExpr::And(a, b) => Value::Boolean(a.test(row, agg) && b.test(row, agg)),
            CExpr::Or(a, b) => Value::Boolean(a.test(row, agg) || b.test(row, agg)),
            CExpr::Not(a) => Value::Boolean(!a.test(row, agg)),
        }
    }

    pub fn test(&self, row: &[Value], agg: Option<&Agg>) -> bool {
        matches!(self.eval(row, agg), Value::Boolean(true))
    }
}

/// Exact comparison; mixed integer/double operands are compared without
/// rounding the integer.
pub(crate) fn compare(op: CompareOp, a: &Value, b: &Value) -> bool {
    let ord = match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Double(x), Value::Double(y)) => x.partial_cmp(y),
        (Value::Integer(x), Value::Double(y)) => cmp_f64_i64(*y, *x).map(Ordering::reverse),
        (Value::Double(x), Value::Integer(y)) => cmp_f64_i64(*x, *y),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        (Value::Boolean(x), Value::Boolean(y)) => Some(x.cmp(y)),
        _ => None,
    };
    let Some(ord) = ord else {
        return op == CompareOp::Ne;
    };
    match op {
        CompareOp::Eq => ord == Ordering::Equal,
        CompareOp::Ne => ord != Ordering::Equal,
        CompareOp::Lt => ord == Ordering::Less,
        CompareOp::Le => ord != Ordering::Greater,
        CompareOp::Gt => ord == Ordering::Greater,
        CompareOp::Ge => ord != Ordering::Less,
    }
}

fn cmp_f64_i64(x: f64, n: i64) -> Option<Ordering> {
    const TWO_63: f64 = 9_223_372_036_854_775_808.0;
    if x.is_nan() {
        return None;
    }
    if x >= TWO_63 {
        return Some(Ordering::Greater);
    }
    if x < -TWO_63 {
        return Some(Ordering::Less);
    }
    let whole = x.trunc();
    match (whole as i64).cmp(&n) {
        Ordering::Equal => 0.0f64.partial_cmp(&(x - whole)).map(Ordering::reverse),
        other => Some(other),
    }
}

/// The stream an expression is evaluated against.
pub(crate) struct Scope<'a> {
    pub stream_name: &'a str,
    pub stream: &'a StreamType,
    pub binding: Option<&'a str>,
}

impl Scope<'_> {
    fn resolve(&self, r: &FieldRef) -> Result<(usize, FieldType), DeployError> {
        if let Some(b) = &r.binding {
            if Some(b.as_str()) != self.binding && b != self.stream_name {
                return Err(DeployError::TypeError(format!("unknown stream binding `{b}` in `{r}`")));
            }
        }
        self.stream
            .index_of(&r.field)
            .map(|i| (i, self.stream.fields[i].1))
            .ok_or_else(|| {
                DeployError::TypeError(format!("stream `{}` has no field `{}`", self.stream_name, r.field))
            })
    }
}

/// Collects the inputs of `avg(..)` calls while lowering projections.
#[derive(Debug, Default)]
pub(crate) struct AggSlots {
    pub inputs: Vec<CExpr>,
    pub integer: Vec<bool>,
}

pub(crate) fn lower(
    expr: &Expr,
    scope: &Scope<'_>,
    mut slots: Option<&mut AggSlots>,
) -> Result<(CExpr, FieldType), DeployError> {
    let bool_operand = |e: &Expr, slots: Option<&mut AggSlots>| -> Result<CExpr, DeployError> {
        let (c, t) = lower(e, scope, slots)?;
        if t != FieldType::Boolean {
            return Err(DeployError::TypeError(format!("`{e}` is {t}, expected boolean")));
        }
        Ok(c)
    };
    Ok(match expr {
        Expr::Field(r) => {
            let (i, t) = scope.resolve(r)?;
            (CExpr::Field(i), t)
        }
        Expr::Literal(l) => match l {
            Literal::Int(i) => (CExpr::Lit(Value::Integer(*i)), FieldType::Integer),
            Literal::Float(x) => (CExpr::Lit(Value::Double(*x)), FieldType::Double),
            Literal::Str(s) => (CExpr::Lit(Value::String(s.clone())), FieldType::String),
            Literal::Bool(b) => (CExpr::Lit(Value::Boolean(*b)), FieldType::Boolean),
        },
        Expr::Avg(inner) => {
            let Some(slots) = slots else {
                return Err(DeployError::TypeError(format!("aggregate `{expr}` is only allowed in select projections")));
            };
            let (c, t) = lower(inner, scope, None)?;
            if !t.is_numeric() {
                return Err(DeployError::TypeError(format!("avg needs a numeric argument, `{inner}` is {t}")));
            }
            slots.inputs.push(c);
            slots.integer.push(t == FieldType::Integer);
            (CExpr::Avg(slots.inputs.len() - 1), FieldType::Double)
        }
        Expr::CountStar => {
            if slots.is_none() {
                return Err(DeployError::TypeError("count(*) is only allowed in select projections".into()));
            }
            (CExpr::Count, FieldType::Integer)
        }
        Expr::Compare { op, lhs, rhs } => {
            let (a, ta) = lower(lhs, scope, slots.as_deref_mut())?;
            let (b, tb) = lower(rhs, scope, slots)?;
            let ok = (ta.is_numeric() && tb.is_numeric())
                || (ta == tb && ta == FieldType::String)
                || (ta == tb && ta == FieldType::Boolean && matches!(op, CompareOp::Eq | CompareOp::Ne));
            if !ok {
                return Err(DeployError::TypeError(format!("cannot compare {ta} with {tb} in `{expr}`")));
            }
            (CExpr::Cmp(*op, Box::new(a), Box::new(b)), FieldType::Boolean)
        }
        Expr::And(a, b) => (
            CExpr::And(
                Box::new(bool_operand(a, slots.as_deref_mut())?),
                Box::new(bool_operand(b, slots)?),
            ),
            FieldType::Boolean,
        ),
        Expr::Or(a, b) => (
            CExpr::Or(
                Box::new(bool_operand(a, slots.as_deref_mut())?),
                Box::new(bool_operand(b, slots)?),
            ),
            FieldType::Boolean,
        ),
        Expr::Not(a) => (CExpr::Not(Box::new(bool_operand(a, slots)?)), FieldType::Boolean),
    })
}

/// Output columns of a projection list.
#[derive(Debug)]
pub(crate) struct Projection {
    pub columns: Vec<(String, FieldType, CExpr)>,
    pub slots: AggSlots,
    pub has_aggregate: bool,
}

impl Projection {
    pub fn output_type(&self) -> StreamType {
        StreamType {
            fields: self.columns.iter().map(|(n, t, _)| (n.clone(), *t)).collect(),
        }
    }
}

pub(crate) fn lower_projection(
    items: &[SelectItem],
    scope: &Scope<'_>,
    allow_aggregates: bool,
) -> Result<Projection, DeployError> {
    let mut slots = AggSlots::default();
    let mut columns: Vec<(String, FieldType, CExpr)> = Vec::new();
    let mut has_aggregate = false;
    for item in items {
        match item {
            SelectItem::Wildcard => {
                for (i, (name, ty)) in scope.stream.fields.iter().enumerate() {
                    columns.push((name.clone(), *ty, CExpr::Field(i)));
                }
            }
            SelectItem::Expr { expr, alias } => {
                if expr.contains_aggregate() {
                    if !allow_aggregates {
                        return Err(DeployError::TypeError(format!("aggregate `{expr}` is not allowed in a pattern")));
                    }
                    has_aggregate = true;
                }
                let (c, t) = lower(expr, scope, Some(&mut slots))?;
                let name = match (alias, expr) {
                    (Some(a), _) => a.clone(),
                    (None, Expr::Field(r)) => r.field.clone(),
                    (None, e) => e.to_string(),
                };
                columns.push((name, t, c));
            }
        }
    }
    for (i, (name, _, _)) in columns.iter().enumerate() {
        if columns[..i].iter().any(|(n, _, _)| n == name) {
            return Err(DeployError::TypeError(format!("duplicate output column `{name}`")));
        }
    }
    Ok(Projection {
        columns,
        slots,
        has_aggregate,
    })
}
