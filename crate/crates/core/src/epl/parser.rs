use std::collections::HashSet;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;
use crate::event::FieldType;

/// Parses one statement; a trailing `;` is optional.
pub fn parse_statement(text: &str) -> Result<EplStatement, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let stmt = p.statement()?;
    p.eat(&Tok::Semicolon);
    if !p.at(&Tok::Eof) {
        return Err(p.error(&["end of statement"]));
    }
    Ok(stmt)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

/// Words that end a stream source, so they are never taken as a binding.
const CLAUSE_WORDS: &[&str] = &[
    "group", "output", "where", "having", "order", "limit", "as", "unidirectional", "retain",
];

const TIME_UNITS: &[(&str, u64)] = &[
    ("s", 1),
    ("sec", 1),
    ("second", 1),
    ("seconds", 1),
    ("min", 60),
    ("minute", 60),
    ("minutes", 60),
    ("hour", 3600),
    ("hours", 3600),
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = &self.tokens[self.pos];
        ParseError {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.to_string(),
        }
    }

    fn unsupported(&self, construct: &str) -> ParseError {
        let t = &self.tokens[self.pos];
        ParseError {
            line: t.line,
            column: t.column,
            expected: Vec::new(),
            found: format!("unsupported construct: {construct}"),
        }
    }

    fn expect(&mut self, t: Tok, label: &str) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn string(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn positive_int(&mut self, what: &str) -> PResult<u64> {
        match *self.peek() {
            Tok::Int(i) if i > 0 => {
                self.bump();
                Ok(i as u64)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn statement(&mut self) -> PResult<EplStatement> {
        let annotations = self.annotations()?;
        let body = if self.at_kw("create") {
            self.create()?
        } else if self.at_kw("context") || self.at_kw("insert") || self.at_kw("select") {
            self.select_or_pattern()?
        } else if self.at(&Tok::Eof) {
            return Err(self.error(&["create", "context", "insert", "select"]));
        } else if let Tok::Ident(word) = self.peek() {
            let word = word.to_ascii_lowercase();
            if ["on", "update", "delete", "expression", "merge"].contains(&word.as_str()) {
                return Err(self.unsupported(&format!("`{word}` statement")));
            }
            return Err(self.error(&["create", "context", "insert", "select"]));
        } else {
            return Err(self.error(&["create", "context", "insert", "select"]));
        };
        Ok(EplStatement { annotations, body })
    }

    fn annotations(&mut self) -> PResult<Vec<Annotation>> {
        let mut out = Vec::new();
        let mut tag_names = HashSet::new();
        while self.at(&Tok::At) {
            self.bump();
            let at = self.pos;
            let name = self.ident("annotation name")?;
            let ann = match name.to_ascii_lowercase().as_str() {
                "public" => Annotation::Public,
                "buseventtype" => Annotation::BusEventType,
                "name" => {
                    self.expect(Tok::LParen, "`(`")?;
                    if self.at_kw("value") && self.peek_at(1) == &Tok::Eq {
                        self.bump();
                        self.bump();
                    }
                    let value = self.string("statement name string")?;
                    self.expect(Tok::RParen, "`)`")?;
                    Annotation::Name { value }
                }
                "tag" => {
                    self.expect(Tok::LParen, "`(`")?;
                    let mut tag_name = None;
                    let mut tag_value = None;
                    loop {
                        let key = self.ident("`name` or `value`")?;
                        self.expect(Tok::Eq, "`=`")?;
                        let v = self.string("string")?;
                        let slot = match key.to_ascii_lowercase().as_str() {
                            "name" => &mut tag_name,
                            "value" => &mut tag_value,
                            _ => {
                                self.pos -= 3;
                                return Err(self.error(&["name", "value"]));
                            }
                        };
                        *slot = Some(v);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    let (Some(tag_name), Some(value)) = (tag_name, tag_value) else {
                        self.pos = at;
                        return Err(ParseError {
                            found: "@Tag requires both name and value".into(),
                            ..self.error(&[])
                        });
                    };
                    if !tag_names.insert(tag_name.clone()) {
                        self.pos = at;
                        return Err(ParseError {
                            found: format!("duplicate @Tag name `{tag_name}`"),
                            ..self.error(&[])
                        });
                    }
                    Annotation::Tag {
                        name: tag_name,
                        value,
                    }
                }
                other => {
                    self.pos = at;
                    return Err(self.unsupported(&format!("annotation @{other}")));
                }
            };
            out.push(ann);
        }
        Ok(out)
    }

    fn create(&mut self) -> PResult<StatementBody> {
        self.expect_kw("create")?;
        if self.eat_kw("schema") {
            let name = self.ident("schema name")?;
            self.eat_kw("as");
            self.expect(Tok::LParen, "`(`")?;
            let mut fields = Vec::new();
            loop {
                let field = self.ident("field name")?;
                let ty_at = self.pos;
                let ty_name = self.ident("field type")?;
                let ty: FieldType = ty_name.parse().map_err(|_| {
                    self.pos = ty_at;
                    self.error(&["integer", "double", "string", "boolean"])
                })?;
                fields.push((field, ty));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RParen, "`)` or `,`")?;
            Ok(StatementBody::CreateSchema(CreateSchema { name, fields }))
        } else if self.eat_kw("context") {
            let name = self.ident("context name")?;
            self.expect_kw("start")?;
            if !self.at(&Tok::At) {
                return Err(self.unsupported("context start condition other than @now"));
            }
            self.bump();
            if !self.at_kw("now") {
                return Err(self.unsupported("context start condition other than @now"));
            }
            self.bump();
            self.expect_kw("end")?;
            if !self.at_kw("after") {
                return Err(self.unsupported("context end condition other than `after`"));
            }
            self.bump();
            let n = self.positive_int("positive duration")?;
            let unit = self.time_unit()?;
            Ok(StatementBody::CreateContext(CreateContext {
                name,
                duration_s: n * unit,
            }))
        } else if self.eat_kw("dataflow") {
            self.dataflow().map(StatementBody::Dataflow)
        } else if let Tok::Ident(w) = self.peek() {
            let w = w.to_ascii_lowercase();
            if ["window", "table", "index", "variable", "expression"].contains(&w.as_str()) {
                Err(self.unsupported(&format!("create {w}")))
            } else {
                Err(self.error(&["schema", "context", "dataflow"]))
            }
        } else {
            Err(self.error(&["schema", "context", "dataflow"]))
        }
    }

    fn time_unit(&mut self) -> PResult<u64> {
        let units: Vec<&str> = TIME_UNITS.iter().map(|(u, _)| *u).collect();
        match self.peek() {
            Tok::Ident(u) => {
                let lower = u.to_ascii_lowercase();
                match TIME_UNITS.iter().find(|(name, _)| *name == lower) {
                    Some((_, mult)) => {
                        self.bump();
                        Ok(*mult)
                    }
                    None => Err(self.error(&units)),
                }
            }
            _ => Err(self.error(&units)),
        }
    }

    fn select_or_pattern(&mut self) -> PResult<StatementBody> {
        let context = if self.eat_kw("context") {
            Some(self.ident("context name")?)
        } else {
            None
        };
        let insert_into = if self.eat_kw("insert") {
            self.expect_kw("into")?;
            Some(self.ident("stream name")?)
        } else {
            None
        };
        self.expect_kw("select")?;
        if self.at_kw("distinct") {
            return Err(self.unsupported("select distinct"));
        }
        let projections = self.select_list()?;
        self.expect_kw("from")?;

        if self.at_kw("pattern") && self.peek_at(1) == &Tok::LBracket {
            if context.is_some() {
                return Err(self.unsupported("context-bound pattern"));
            }
            self.bump();
            self.bump();
            let every = self.every()?;
            self.expect(Tok::RBracket, "`]`")?;
            if self.at_kw("group") || self.at_kw("output") || self.at_kw("where") {
                return Err(self.unsupported("clauses after a pattern source"));
            }
            return Ok(StatementBody::Pattern(PatternStatement {
                insert_into,
                projections,
                every,
            }));
        }

        let source = self.stream_source()?;
        if context.is_some() && source.window_s.is_some() {
            return Err(self.unsupported("time window inside a context"));
        }
        if self.at_kw("where") {
            return Err(self.unsupported("where clause"));
        }
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.field_ref()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        for clause in ["having", "order", "limit"] {
            if self.at_kw(clause) {
                return Err(self.unsupported(&format!("{clause} clause")));
            }
        }
        let mut snapshot_on_terminate = false;
        if self.eat_kw("output") {
            if !self.at_kw("snapshot") {
                return Err(self.unsupported("output rate limiting other than `snapshot when terminated`"));
            }
            self.bump();
            self.expect_kw("when")?;
            if !self.at_kw("terminated") {
                return Err(self.unsupported("output snapshot condition other than `terminated`"));
            }
            self.bump();
            if context.is_none() {
                return Err(ParseError {
                    found: "`output snapshot when terminated` requires a context".into(),
                    ..self.error(&[])
                });
            }
            snapshot_on_terminate = true;
        }
        Ok(StatementBody::Select(SelectStatement {
            context,
            insert_into,
            projections,
            source,
            group_by,
            snapshot_on_terminate,
        }))
    }

    fn select_list(&mut self) -> PResult<Vec<SelectItem>> {
        let mut items = Vec::new();
        loop {
            if self.eat(&Tok::Star) {
                items.push(SelectItem::Wildcard);
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_kw("as") {
                    Some(self.ident("alias")?)
                } else {
                    None
                };
                items.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        Ok(items)
    }

    fn stream_source(&mut self) -> PResult<StreamSource> {
        let stream = self.ident("stream name")?;
        let mut window_s = None;
        if self.eat(&Tok::Hash) {
            let kind_at = self.pos;
            let kind = self.ident("window kind")?;
            if !kind.eq_ignore_ascii_case("time") {
                self.pos = kind_at;
                return Err(self.unsupported(&format!("#{kind} window")));
            }
            self.expect(Tok::LParen, "`(`")?;
            let n = self.positive_int("positive window length")?;
            let unit = self.time_unit()?;
            self.expect(Tok::RParen, "`)`")?;
            window_s = Some(n * unit);
        }
        let explicit_as = self.eat_kw("as");
        let binding = match self.peek() {
            Tok::Ident(s) if explicit_as || !CLAUSE_WORDS.iter().any(|w| s.eq_ignore_ascii_case(w)) => {
                Some(self.ident("binding")?)
            }
            _ if explicit_as => return Err(self.error(&["binding name"])),
            _ => None,
        };
        Ok(StreamSource {
            stream,
            binding,
            window_s,
        })
    }

    fn every(&mut self) -> PResult<EveryPattern> {
        if !self.at_kw("every") {
            return Err(self.unsupported("pattern expression other than `every x = Stream(filter)`"));
        }
        self.bump();
        let binding = self.ident("binding name")?;
        self.expect(Tok::Eq, "`=`")?;
        let stream = self.ident("stream name")?;
        let filter = if self.eat(&Tok::LParen) {
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            Some(e)
        } else {
            None
        };
        if self.at_kw("or") || self.at_kw("and") || self.at(&Tok::Arrow) || self.at_kw("where") {
            return Err(self.unsupported("temporal pattern operators"));
        }
        Ok(EveryPattern {
            binding,
            stream,
            filter,
        })
    }

    fn field_ref(&mut self) -> PResult<FieldRef> {
        let first = self.ident("field name")?;
        if self.eat(&Tok::Dot) {
            let field = self.ident("field name")?;
            Ok(FieldRef {
                binding: Some(first),
                field,
            })
        } else {
            Ok(FieldRef {
                binding: None,
                field: first,
            })
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("or") {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat_kw("and") {
            let rhs = self.not_expr()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            Ok(Expr::Not(Box::new(self.not_expr()?)))
        } else {
            self.comparison()
        }
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.primary()?;
        let op = match self.peek() {
            Tok::Eq => CompareOp::Eq,
            Tok::Ne => CompareOp::Ne,
            Tok::Lt => CompareOp::Lt,
            Tok::Le => CompareOp::Le,
            Tok::Gt => CompareOp::Gt,
            Tok::Ge => CompareOp::Ge,
            _ => {
                if self.at_kw("between") || self.at_kw("in") || self.at_kw("like") {
                    return Err(self.unsupported("between/in/like operators"));
                }
                return Ok(lhs);
            }
        };
        self.bump();
        let rhs = self.primary()?;
        Ok(Expr::compare(op, lhs, rhs))
    }

    fn primary(&mut self) -> PResult<Expr> {
        const EXPECTED: &[&str] = &["expression"];
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Literal(Literal::Int(i)))
            }
            Tok::Float(x) => {
                self.bump();
                Ok(Expr::Literal(Literal::Float(x)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Tok::Minus => {
                self.bump();
                match *self.peek() {
                    Tok::Int(i) => {
                        self.bump();
                        Ok(Expr::Literal(Literal::Int(-i)))
                    }
                    Tok::Float(x) => {
                        self.bump();
                        Ok(Expr::Literal(Literal::Float(-x)))
                    }
                    _ => Err(self.error(&["number"])),
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(word) => {
                let lower = word.to_ascii_lowercase();
                if self.peek_at(1) == &Tok::LParen {
                    return match lower.as_str() {
                        "avg" => {
                            self.bump();
                            self.bump();
                            let e = self.expr()?;
                            self.expect(Tok::RParen, "`)`")?;
                            if e.contains_aggregate() {
                                return Err(self.unsupported("nested aggregate"));
                            }
                            Ok(Expr::Avg(Box::new(e)))
                        }
                        "count" => {
                            self.bump();
                            self.bump();
                            if !self.eat(&Tok::Star) {
                                if self.at(&Tok::RParen) || self.at(&Tok::Eof) {
                                    return Err(self.error(&["`*`"]));
                                }
                                return Err(self.unsupported("count(expression)"));
                            }
                            self.expect(Tok::RParen, "`)`")?;
                            Ok(Expr::CountStar)
                        }
                        _ => Err(self.unsupported(&format!("function {word}()"))),
                    };
                }
                match lower.as_str() {
                    "true" => {
                        self.bump();
                        Ok(Expr::Literal(Literal::Bool(true)))
                    }
                    "false" => {
                        self.bump();
                        Ok(Expr::Literal(Literal::Bool(false)))
                    }
                    "from" | "select" | "as" | "group" | "and" | "or" => Err(self.error(EXPECTED)),
                    _ => self.field_ref().map(Expr::Field),
                }
            }
            _ => Err(self.error(EXPECTED)),
        }
    }

    fn dataflow(&mut self) -> PResult<DataflowStatement> {
        let name = self.ident("dataflow name")?;
        let op_at = self.pos;
        let source_operator = self.ident("source operator")?;
        if !source_operator.eq_ignore_ascii_case("AMQPSource") {
            self.pos = op_at;
            return Err(self.unsupported(&format!("dataflow operator {source_operator}")));
        }
        self.expect(Tok::Arrow, "`->`")?;
        let out_stream = self.ident("output stream name")?;
        self.expect(Tok::Lt, "`<`")?;
        let out_schema = self.ident("event type name")?;
        self.expect(Tok::Gt, "`>`")?;
        let params = self.dataflow_params()?;
        let sink_at = self.pos;
        let sink_operator = self.ident("sink operator")?;
        if !sink_operator.eq_ignore_ascii_case("EventBusSink") {
            self.pos = sink_at;
            return Err(self.unsupported(&format!("dataflow operator {sink_operator}")));
        }
        self.expect(Tok::LParen, "`(`")?;
        let input_at = self.pos;
        let input = self.ident("input stream name")?;
        if input != out_stream {
            self.pos = input_at;
            return Err(self.error(&[out_stream.as_str()]));
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::LBrace, "`{`")?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(DataflowStatement {
            name,
            source_operator,
            out_stream,
            out_schema,
            params,
            sink_operator,
        })
    }

    fn dataflow_params(&mut self) -> PResult<DataflowParams> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut host = None;
        let mut queue_name = None;
        let mut collector = None;
        let mut log_messages = false;
        let mut declare_auto_delete = false;
        let mut declare_durable = false;
        let mut seen = HashSet::new();
        if !self.at(&Tok::RBrace) {
            loop {
                let key_at = self.pos;
                let key = self.ident("parameter name")?;
                if !seen.insert(key.clone()) {
                    self.pos = key_at;
                    return Err(ParseError {
                        found: format!("duplicate dataflow parameter `{key}`"),
                        ..self.error(&[])
                    });
                }
                self.expect(Tok::Colon, "`:`")?;
                match key.as_str() {
                    "host" => host = Some(self.string("host string")?),
                    "queueName" => queue_name = Some(self.string("queue name string")?),
                    "collector" => {
                        self.expect(Tok::LBrace, "`{`")?;
                        self.expect_kw("class")?;
                        self.expect(Tok::Colon, "`:`")?;
                        collector = Some(self.string("collector class string")?);
                        self.expect(Tok::RBrace, "`}`")?;
                    }
                    "logMessages" => log_messages = self.boolean()?,
                    "declareAutoDelete" => declare_auto_delete = self.boolean()?,
                    "declareDurable" => declare_durable = self.boolean()?,
                    _ => {
                        self.pos = key_at;
                        return Err(self.unsupported(&format!("dataflow parameter `{key}`")));
                    }
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RBrace, "`}` or `,`")?;
        let Some(queue_name) = queue_name else {
            return Err(ParseError {
                found: "dataflow requires a queueName parameter".into(),
                ..self.error(&[])
            });
        };
        Ok(DataflowParams {
            host: host.unwrap_or_else(|| "localhost".to_owned()),
            queue_name,
            collector,
            log_messages,
            declare_auto_delete,
            declare_durable,
        })
    }

    fn boolean(&mut self) -> PResult<bool> {
        if self.eat_kw("true") {
            Ok(true)
        } else if self.eat_kw("false") {
            Ok(false)
        } else {
            Err(self.error(&["true", "false"]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dangling_paren() {
        let err = parse_statement("select avg(").unwrap_err();
        assert_eq!((err.line, err.column), (1, 11));
        assert_eq!(err.found, "end of input");
        assert_eq!(err.expected, vec!["expression".to_string()]);
    }

    #[test]
    fn truncated_schema() {
        let err = parse_statement("create schema").unwrap_err();
        assert_eq!(err.expected, vec!["schema name".to_string()]);
    }

    #[test]
    fn keywords_are_case_insensitive_identifiers_are_not() {
        let a = parse_statement("SELECT * FROM Dummy").unwrap();
        let b = parse_statement("select * from Dummy").unwrap();
        assert_eq!(a, b);
        let c = parse_statement("select * from dummy").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_field_type() {
        let err = parse_statement("create schema S (a decimal)").unwrap_err();
        assert!(err.expected.contains(&"integer".to_string()));
    }

    #[test]
    fn tag_rules() {
        let dup = parse_statement("@Tag(name='a', value='1') @Tag(name='a', value='2') select * from S");
        assert!(dup.unwrap_err().found.contains("duplicate @Tag"));
        let half = parse_statement("@Tag(name='a') select * from S");
        assert!(half.unwrap_err().found.contains("both name and value"));
        let swapped = parse_statement("@Tag(value='1', name='a') select * from S").unwrap();
        assert_eq!(swapped.tags(), vec![("a".to_string(), "1".to_string())]);
    }

    #[test]
    fn unsupported_constructs_are_named() {
        for (text, needle) in [
            ("select * from S#length(5)", "#length"),
            ("select * from S where x = 1", "where"),
            ("select sum(x) from S", "sum"),
            ("create window W#time(1 sec) as S", "create window"),
            ("@Hint('x') select * from S", "@hint"),
            ("select * from pattern [every a=S -> b=T]", "temporal"),
            ("context C select count(*) from S output every 5 sec", "output rate"),
            ("select count(x) from S", "count(expression)"),
        ] {
            let err = parse_statement(text).unwrap_err();
            assert!(
                err.found.to_lowercase().contains(&needle.to_lowercase()),
                "{text}: {err}"
            );
        }
    }

    #[test]
    fn snapshot_requires_context() {
        let err = parse_statement("select count(*) from S output snapshot when terminated").unwrap_err();
        assert!(err.found.contains("requires a context"));
    }

    #[test]
    fn operator_precedence() {
        let s = parse_statement("select * from pattern [every a = S (a.x > 1 or a.x < 0 and not a.y = 2)]").unwrap();
        let StatementBody::Pattern(p) = s.body else { panic!() };
        let Some(Expr::Or(_, rhs)) = p.every.filter else { panic!() };
        assert!(matches!(*rhs, Expr::And(_, _)));
    }

    #[test]
    fn dataflow_params_validation() {
        let missing = parse_statement(
            "create dataflow F AMQPSource -> s<S> {host: 'h'} EventBusSink(s) {}",
        );
        assert!(missing.unwrap_err().found.contains("queueName"));
        let unknown = parse_statement(
            "create dataflow F AMQPSource -> s<S> {queueName: 'q', exchange: 'x'} EventBusSink(s) {}",
        );
        assert!(unknown.unwrap_err().found.contains("exchange"));
        let mismatched = parse_statement(
            "create dataflow F AMQPSource -> s<S> {queueName: 'q'} EventBusSink(t) {}",
        );
        assert!(mismatched.is_err());
        let ok = parse_statement("create dataflow F AMQPSource -> s<S> {queueName: 'q'} EventBusSink(s) {}")
            .unwrap();
        let StatementBody::Dataflow(d) = ok.body else { panic!() };
        assert_eq!(d.params.host, "localhost");
    }

    #[test]
    fn negative_literals_and_floats() {
        let s = parse_statement("select * from pattern [every a = S (a.v >= -2.5 and a.v < 1e2)]").unwrap();
        let StatementBody::Pattern(p) = s.body else { panic!() };
        assert_eq!(
            p.every.filter,
            Some(Expr::and(
                Expr::compare(CompareOp::Ge, Expr::field(Some("a"), "v"), Expr::Literal(Literal::Float(-2.5))),
                Expr::compare(CompareOp::Lt, Expr::field(Some("a"), "v"), Expr::Literal(Literal::Float(100.0))),
            ))
        );
    }
}
