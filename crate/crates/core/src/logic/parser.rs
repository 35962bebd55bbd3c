//! Recursive-descent parser for rule files.
//!
//! ```text
//! file    := "labels" ":" ident ("," ident)* rule*
//! rule    := "rule" ident "over" "(" ident ("," ident)* ")" ":" iff
//! iff     := imp ("<->" imp)*
//! imp     := or ("->" imp)?
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | primary
//! primary := "true" | "(" iff ")" | ident "(" ident ("," ident)* ")"
//! ```
//!
//! `#` starts a comment that runs to the end of the line. Newlines are
//! insignificant, so a rule may span several lines.

use super::{Atom, Formula, LabelSet, LogicError, Rule, RuleSet, Target, RESERVED};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Bang,
    Amp,
    Pipe,
    Arrow,
    DoubleArrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::DoubleArrow => "`<->`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, LogicError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        let tok = match c {
            '#' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump(&mut chars);
                }
                continue;
            }
            c if c.is_whitespace() => {
                bump(&mut chars);
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '!' => Tok::Bang,
            '&' => Tok::Amp,
            '|' => Tok::Pipe,
            '-' => {
                bump(&mut chars);
                if chars.peek() == Some(&'>') {
                    bump(&mut chars);
                    out.push(Spanned { tok: Tok::Arrow, line: tl, col: tc });
                    continue;
                }
                return Err(syntax(tl, tc, &["`->`"], "`-`".into()));
            }
            '<' => {
                bump(&mut chars);
                let ok = chars.peek() == Some(&'-') && {
                    bump(&mut chars);
                    chars.peek() == Some(&'>')
                };
                if ok {
                    bump(&mut chars);
                    out.push(Spanned { tok: Tok::DoubleArrow, line: tl, col: tc });
                    continue;
                }
                return Err(syntax(tl, tc, &["`<->`"], "`<`".into()));
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        bump(&mut chars);
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(ident), line: tl, col: tc });
                continue;
            }
            other => return Err(syntax(tl, tc, &["a token"], format!("`{other}`"))),
        };
        bump(&mut chars);
        out.push(Spanned { tok, line: tl, col: tc });
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

fn syntax(line: usize, col: usize, expected: &[&str], found: String) -> LogicError {
    LogicError::Syntax {
        line,
        col,
        expected: expected.iter().map(|s| s.to_string()).collect(),
        found,
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    labels: Option<LabelSet>,
    // Variables of the rule being parsed, with the rule name.
    scope: Option<(String, Vec<String>)>,
}

/// Parse a complete rule file.
pub fn parse_rule_file(text: &str) -> Result<RuleSet, LogicError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        labels: None,
        scope: None,
    };
    p.file()
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, LogicError> {
        let t = self.peek();
        Err(syntax(t.line, t.col, expected, t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<Spanned, LogicError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            self.fail(&[&tok.describe()])
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), LogicError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            _ => self.fail(&[&format!("`{kw}`")]),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize, usize), LogicError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.next();
                Ok((s, t.line, t.col))
            }
            _ => self.fail(&[what]),
        }
    }

    fn ident_list(&mut self, what: &str) -> Result<Vec<(String, usize, usize)>, LogicError> {
        let mut out = vec![self.ident(what)?];
        while self.peek().tok == Tok::Comma {
            self.next();
            out.push(self.ident(what)?);
        }
        Ok(out)
    }

    fn file(&mut self) -> Result<RuleSet, LogicError> {
        self.keyword("labels")?;
        self.expect(Tok::Colon)?;
        let names: Vec<String> = self.ident_list("a label name")?.into_iter().map(|t| t.0).collect();
        let labels = LabelSet::new(names)?;
        self.labels = Some(labels.clone());
        let mut rules = Vec::new();
        loop {
            match &self.peek().tok {
                Tok::Eof => break,
                Tok::Ident(s) if s == "rule" => rules.push(self.rule()?),
                _ => return self.fail(&["`rule`", "end of input"]),
            }
        }
        RuleSet::new(labels, rules)
    }

    fn rule(&mut self) -> Result<Rule, LogicError> {
        self.keyword("rule")?;
        let (name, _, _) = self.ident("a rule name")?;
        self.keyword("over")?;
        self.expect(Tok::LParen)?;
        let vars: Vec<String> = self.ident_list("a variable name")?.into_iter().map(|t| t.0).collect();
        self.expect(Tok::RParen)?;
        self.expect(Tok::Colon)?;
        self.scope = Some((name.clone(), vars.clone()));
        let body = self.iff()?;
        self.scope = None;
        Rule::new(name, vars, body)
    }

    fn iff(&mut self) -> Result<Formula, LogicError> {
        let mut lhs = self.imp()?;
        while self.peek().tok == Tok::DoubleArrow {
            self.next();
            lhs = Formula::iff(lhs, self.imp()?);
        }
        Ok(lhs)
    }

    fn imp(&mut self) -> Result<Formula, LogicError> {
        let lhs = self.or()?;
        if self.peek().tok == Tok::Arrow {
            self.next();
            return Ok(Formula::implies(lhs, self.imp()?));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, LogicError> {
        let mut lhs = self.and()?;
        while self.peek().tok == Tok::Pipe {
            self.next();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, LogicError> {
        let mut lhs = self.unary()?;
        while self.peek().tok == Tok::Amp {
            self.next();
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        if self.peek().tok == Tok::Bang {
            self.next();
            return Ok(Formula::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Formula, LogicError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::LParen => {
                self.next();
                let f = self.iff()?;
                self.expect(Tok::RParen)?;
                Ok(f)
            }
            Tok::Ident(s) if s == "true" => {
                self.next();
                Ok(Formula::Top)
            }
            Tok::Ident(s) if s == "gold" || !RESERVED.contains(&s.as_str()) => {
                let name = s.clone();
                self.next();
                let target = if name == "gold" {
                    Target::Gold
                } else {
                    let labels = self.labels.as_ref().expect("labels parsed first");
                    Target::Label(labels.lookup(&name).ok_or(LogicError::UndeclaredLabel {
                        line: t.line,
                        col: t.col,
                        label: name,
                    })?)
                };
                self.expect(Tok::LParen)?;
                let args = self.ident_list("a variable name")?;
                self.expect(Tok::RParen)?;
                let (rule, vars) = self.scope.as_ref().expect("inside a rule");
                if let Some((var, line, col)) = args.iter().find(|(a, _, _)| !vars.contains(a)) {
                    return Err(LogicError::UndeclaredVariable {
                        line: *line,
                        col: *col,
                        rule: rule.clone(),
                        var: var.clone(),
                    });
                }
                Ok(Formula::Pred(Atom {
                    target,
                    args: args.into_iter().map(|a| a.0).collect(),
                }))
            }
            _ => self.fail(&["`(`", "`!`", "`true`", "a predicate"]),
        }
    }
}
