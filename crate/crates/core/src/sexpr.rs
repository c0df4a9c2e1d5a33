//! A small s-expression reader for SMT-LIB2 text.
//!
//! It understands just enough lexical structure to split a script into
//! top-level commands (with their source spans and line numbers), collect
//! line comments, and read solver responses. Term-level semantics are left
//! to the solver.

use std::fmt;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

impl SExpr {
    pub fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(a) => Some(a),
            SExpr::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::Atom(_) => None,
            SExpr::List(items) => Some(items),
        }
    }

    /// Head symbol of a non-empty list.
    pub fn head(&self) -> Option<&str> {
        self.list().and_then(|l| l.first()).and_then(SExpr::atom)
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => f.write_str(a),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ReadError {
    pub line: usize,
    pub message: String,
}

/// A top-level form together with where it came from.
#[derive(Debug, Clone)]
pub struct Form {
    pub expr: SExpr,
    pub span: Range<usize>,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct Comment {
    pub line: usize,
    /// Text after the leading `;`, untrimmed.
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct Document {
    pub forms: Vec<Form>,
    pub comments: Vec<Comment>,
}

struct Reader<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    comments: Vec<Comment>,
}

impl<'a> Reader<'a> {
    fn new(src: &'a str) -> Self {
        Reader {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            comments: Vec::new(),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> ReadError {
        ReadError {
            line,
            message: message.into(),
        }
    }

    fn skip_trivia(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'\n' => {
                    self.line += 1;
                    self.pos += 1;
                }
                b' ' | b'\t' | b'\r' => self.pos += 1,
                b';' => {
                    let start = self.pos + 1;
                    let end = self.src[start..]
                        .find('\n')
                        .map_or(self.bytes.len(), |k| start + k);
                    self.comments.push(Comment {
                        line: self.line,
                        text: self.src[start..end].to_string(),
                    });
                    self.pos = end;
                }
                _ => break,
            }
        }
    }

    /// Reads one expression; the caller guarantees we're not at EOF.
    fn read_expr(&mut self) -> Result<SExpr, ReadError> {
        let open_line = self.line;
        match self.bytes[self.pos] {
            b'(' => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    if self.pos >= self.bytes.len() {
                        return Err(self.err(open_line, "unbalanced parentheses: '(' is never closed"));
                    }
                    if self.bytes[self.pos] == b')' {
                        self.pos += 1;
                        return Ok(SExpr::List(items));
                    }
                    items.push(self.read_expr()?);
                }
            }
            b')' => Err(self.err(self.line, "unbalanced parentheses: unexpected ')'")),
            b'"' => self.read_delimited(b'"', true),
            b'|' => self.read_delimited(b'|', false),
            _ => {
                let start = self.pos;
                while self.pos < self.bytes.len() {
                    match self.bytes[self.pos] {
                        b' ' | b'\t' | b'\r' | b'\n' | b'(' | b')' | b';' | b'"' | b'|' => break,
                        _ => self.pos += 1,
                    }
                }
                Ok(SExpr::Atom(self.src[start..self.pos].to_string()))
            }
        }
    }

    /// String literals (`""` escapes a quote) and quoted symbols.
    fn read_delimited(&mut self, delim: u8, doubled_escape: bool) -> Result<SExpr, ReadError> {
        let open_line = self.line;
        let start = self.pos;
        self.pos += 1;
        loop {
            if self.pos >= self.bytes.len() {
                return Err(self.err(open_line, "unterminated literal"));
            }
            let b = self.bytes[self.pos];
            self.pos += 1;
            if b == b'\n' {
                self.line += 1;
            } else if b == delim {
                if doubled_escape && self.bytes.get(self.pos) == Some(&delim) {
                    self.pos += 1;
                    continue;
                }
                return Ok(SExpr::Atom(self.src[start..self.pos].to_string()));
            }
        }
    }
}

/// Reads every top-level form of `src`.
pub fn read_document(src: &str) -> Result<Document, ReadError> {
    let mut reader = Reader::new(src);
    let mut forms = Vec::new();
    loop {
        reader.skip_trivia();
        if reader.pos >= reader.bytes.len() {
            break;
        }
        let start = reader.pos;
        let line = reader.line;
        let expr = reader.read_expr()?;
        forms.push(Form {
            expr,
            span: start..reader.pos,
            line,
        });
    }
    Ok(Document {
        forms,
        comments: reader.comments,
    })
}

/// Reads exactly one expression, ignoring surrounding whitespace and comments.
pub fn read_one(src: &str) -> Result<SExpr, ReadError> {
    let doc = read_document(src)?;
    let mut forms = doc.forms.into_iter();
    match (forms.next(), forms.next()) {
        (Some(form), None) => Ok(form.expr),
        (None, _) => Err(ReadError {
            line: 1,
            message: "empty input".into(),
        }),
        (Some(_), Some(extra)) => Err(ReadError {
            line: extra.line,
            message: "trailing input after expression".into(),
        }),
    }
}

/// Net parenthesis depth of `text`, ignoring string literals, quoted
/// symbols and comments. Used to tell when a multi-line solver response is
/// complete.
pub(crate) fn paren_balance(text: &str) -> i64 {
    let mut depth = 0i64;
    let mut in_string = false;
    let mut in_quoted = false;
    let mut in_comment = false;
    for c in text.chars() {
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
        } else if in_string {
            if c == '"' {
                in_string = false;
            }
        } else if in_quoted {
            if c == '|' {
                in_quoted = false;
            }
        } else {
            match c {
                '(' => depth += 1,
                ')' => depth -= 1,
                '"' => in_string = true,
                '|' => in_quoted = true,
                ';' => in_comment = true,
                _ => {}
            }
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_forms_with_spans() {
        let src = "(set-logic QF_BV)\n; hello\n(assert (= x #b01))";
        let doc = read_document(src).unwrap();
        assert_eq!(doc.forms.len(), 2);
        assert_eq!(&src[doc.forms[1].span.clone()], "(assert (= x #b01))");
        assert_eq!(doc.forms[1].line, 3);
        assert_eq!(doc.comments.len(), 1);
        assert_eq!(doc.comments[0].text, " hello");
    }

    #[test]
    fn string_and_quoted_symbols_are_atoms() {
        let e = read_one(r#"(echo "a "" ( b" |x y)|)"#).unwrap();
        let items = e.list().unwrap();
        assert_eq!(items[1], SExpr::Atom(r#""a "" ( b""#.into()));
        assert_eq!(items[2], SExpr::Atom("|x y)|".into()));
    }

    #[test]
    fn unbalanced_reports_line() {
        let err = read_document("(a\n(b c)\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = read_document("(a)\n\n)").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn balance_ignores_literals() {
        assert_eq!(paren_balance(r#"(error "oops (")"#), 0);
        assert_eq!(paren_balance("((x #b01)"), 1);
    }

    #[test]
    fn display_round_trips() {
        let e = read_one("(assert  (bvult x\n #b0101))").unwrap();
        assert_eq!(e.to_string(), "(assert (bvult x #b0101))");
        assert_eq!(read_one(&e.to_string()).unwrap(), e);
    }
}
