//! Syntax tree for the supported statement language.

use std::fmt;

use serde::Serialize;

use crate::event::FieldType;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Annotation {
    Name { value: String },
    Tag { name: String, value: String },
    Public,
    BusEventType,
}

/// A parsed statement with its leading annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EplStatement {
    pub annotations: Vec<Annotation>,
    pub body: StatementBody,
}

impl EplStatement {
    /// `@Tag` pairs in declaration order.
    pub fn tags(&self) -> Vec<(String, String)> {
        self.annotations
            .iter()
            .filter_map(|a| match a {
                Annotation::Tag { name, value } => Some((name.clone(), value.clone())),
                _ => None,
            })
            .collect()
    }

    /// Value of the `@Name` annotation, if any.
    pub fn name(&self) -> Option<&str> {
        self.annotations.iter().find_map(|a| match a {
            Annotation::Name { value } => Some(value.as_str()),
            _ => None,
        })
    }

    pub fn kind(&self) -> StatementKind {
        match self.body {
            StatementBody::CreateSchema(_) => StatementKind::Schema,
            StatementBody::CreateContext(_) => StatementKind::Context,
            StatementBody::Select(_) => StatementKind::Select,
            StatementBody::Pattern(_) => StatementKind::Pattern,
            StatementBody::Dataflow(_) => StatementKind::Dataflow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum StatementKind {
    Schema,
    Context,
    Select,
    Pattern,
    Dataflow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum StatementBody {
    CreateSchema(CreateSchema),
    CreateContext(CreateContext),
    Select(SelectStatement),
    Pattern(PatternStatement),
    Dataflow(DataflowStatement),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreateSchema {
    pub name: String,
    pub fields: Vec<(String, FieldType)>,
}

/// `create context NAME start @now end after N unit`, repeating back to back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreateContext {
    pub name: String,
    pub duration_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectStatement {
    pub context: Option<String>,
    pub insert_into: Option<String>,
    pub projections: Vec<SelectItem>,
    pub source: StreamSource,
    pub group_by: Vec<FieldRef>,
    /// `output snapshot when terminated`.
    pub snapshot_on_terminate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternStatement {
    pub insert_into: Option<String>,
    pub projections: Vec<SelectItem>,
    pub every: EveryPattern,
}

/// `every binding = Stream (filter)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EveryPattern {
    pub binding: String,
    pub stream: String,
    pub filter: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamSource {
    pub stream: String,
    pub binding: Option<String>,
    /// Sliding `#time(D)` window length in seconds.
    pub window_s: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "item", rename_all = "camelCase")]
pub enum SelectItem {
    Wildcard,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FieldRef {
    pub binding: Option<String>,
    pub field: String,
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.binding {
            Some(b) => write!(f, "{b}.{}", self.field),
            None => f.write_str(&self.field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "lit", content = "value", rename_all = "camelCase")]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Expr {
    Field(FieldRef),
    Literal(Literal),
    Avg(Box<Expr>),
    CountStar,
    Compare {
        op: CompareOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn field(binding: Option<&str>, field: &str) -> Self {
        Expr::Field(FieldRef {
            binding: binding.map(str::to_owned),
            field: field.to_owned(),
        })
    }

    pub fn compare(op: CompareOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Compare {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        Expr::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Avg(_) | Expr::CountStar => true,
            Expr::Field(_) | Expr::Literal(_) => false,
            Expr::Compare { lhs, rhs, .. } | Expr::And(lhs, rhs) | Expr::Or(lhs, rhs) => {
                lhs.contains_aggregate() || rhs.contains_aggregate()
            }
            Expr::Not(e) => e.contains_aggregate(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Field(r) => write!(f, "{r}"),
            Expr::Literal(Literal::Int(i)) => write!(f, "{i}"),
            Expr::Literal(Literal::Float(x)) => write!(f, "{x:?}"),
            Expr::Literal(Literal::Str(s)) => write!(f, "'{s}'"),
            Expr::Literal(Literal::Bool(b)) => write!(f, "{b}"),
            Expr::Avg(e) => write!(f, "avg({e})"),
            Expr::CountStar => f.write_str("count(*)"),
            Expr::Compare { op, lhs, rhs } => write!(f, "{lhs} {op} {rhs}"),
            Expr::And(a, b) => write!(f, "({a} and {b})"),
            Expr::Or(a, b) => write!(f, "({a} or {b})"),
            Expr::Not(e) => write!(f, "not {e}"),
        }
    }
}

/// `create dataflow NAME AMQPSource -> out<Schema> {params} EventBusSink(out) {}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataflowStatement {
    pub name: String,
    pub source_operator: String,
    pub out_stream: String,
    pub out_schema: String,
    pub params: DataflowParams,
    pub sink_operator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DataflowParams {
    pub host: String,
    pub queue_name: String,
    /// Serializer class named by `collector: {class: '...'}`; informational.
    pub collector: Option<String>,
    pub log_messages: bool,
    pub declare_auto_delete: bool,
    /// Accepted for compatibility; queues are in-memory regardless.
    pub declare_durable: bool,
}
