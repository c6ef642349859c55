//! Rule-based HTTP request inspection. Fourth line of defense.
//!
//! Rules are one per line:
//!
//! ```text
//! RULE <id> <target> <transforms> <op> <arg> <action>
//! ```
//!
//! * target: `method`, `uri`, `any_header`, `header:<name>`, `body`, `duration_ms`
//! * transforms: comma-separated list of `none`, `lowercase`, `urldecode`
//! * op: `contains`, `matches`, `len_gt`, `num_gt`
//! * arg: a double-quoted string (`\"` and `\\` escapes) or a bare number
//! * action: `sandbox` or `log`
//!
//! `matches` accepts a portable regular-expression subset: literals, classes,
//! anchors `^`/`$`, repetition, grouping and alternation. Inline flags,
//! lookaround, Unicode properties and word-boundary assertions are rejected.
//! Patterns run over raw bytes.

mod transform;

use std::fmt;

use regex::bytes::{Regex, RegexBuilder};

pub use transform::{apply_transforms, apply_transforms_bytes, url_decode, Transform};

use crate::model::HttpInfo;

const DEFAULT_RULES: &str = include_str!("../../data/default.rules");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    Method,
    Uri,
    AnyHeader,
    /// Header name, stored lowercase; matched case-insensitively.
    Header(String),
    Body,
    DurationMs,
}

impl Target {
    fn parse(s: &str) -> Option<Target> {
        Some(match s {
            "method" => Target::Method,
            "uri" => Target::Uri,
            "any_header" => Target::AnyHeader,
            "body" => Target::Body,
            "duration_ms" => Target::DurationMs,
            _ => {
                let name = s.strip_prefix("header:")?;
                if name.is_empty() {
                    return None;
                }
                Target::Header(name.to_ascii_lowercase())
            }
        })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Target::DurationMs)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Method => f.write_str("method"),
            Target::Uri => f.write_str("uri"),
            Target::AnyHeader => f.write_str("any_header"),
            Target::Header(n) => write!(f, "header:{n}"),
            Target::Body => f.write_str("body"),
            Target::DurationMs => f.write_str("duration_ms"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Operator {
    Contains(Vec<u8>),
    Matches(Regex),
    LenGt(u64),
    NumGt(u64),
}

impl Operator {
    pub fn name(&self) -> &'static str {
        match self {
            Operator::Contains(_) => "contains",
            Operator::Matches(_) => "matches",
            Operator::LenGt(_) => "len_gt",
            Operator::NumGt(_) => "num_gt",
        }
    }

    fn test(&self, value: &[u8]) -> bool {
        match self {
            Operator::Contains(needle) => {
                needle.is_empty() || value.windows(needle.len()).any(|w| w == needle.as_slice())
            }
            Operator::Matches(re) => re.is_match(value),
            Operator::LenGt(n) => value.len() as u64 > *n,
            Operator::NumGt(_) => false,
        }
    }
}

impl PartialEq for Operator {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Operator::Contains(a), Operator::Contains(b)) => a == b,
            (Operator::Matches(a), Operator::Matches(b)) => a.as_str() == b.as_str(),
            (Operator::LenGt(a), Operator::LenGt(b)) => a == b,
            (Operator::NumGt(a), Operator::NumGt(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Operator {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Sandbox,
    Log,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Sandbox => "sandbox",
            Action::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: u64,
    pub target: Target,
    pub transforms: Vec<Transform>,
    pub operator: Operator,
    pub action: Action,
}

fn quote(bytes: &[u8]) -> String {
    let mut s = String::from("\"");
    for c in String::from_utf8_lossy(bytes).chars() {
        if c == '"' || c == '\\' {
            s.push('\\');
        }
        s.push(c);
    }
    s.push('"');
    s
}

impl fmt::Display for Rule {
    /// Renders the rule back into its DSL line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let transforms: Vec<&str> = self.transforms.iter().map(|t| t.as_str()).collect();
        let arg = match &self.operator {
            Operator::Contains(b) => quote(b),
            Operator::Matches(re) => quote(re.as_str().as_bytes()),
            Operator::LenGt(n) | Operator::NumGt(n) => n.to_string(),
        };
        write!(
            f,
            "RULE {} {} {} {} {} {}",
            self.id,
            self.target,
            transforms.join(","),
            self.operator.name(),
            arg,
            self.action.as_str()
        )
    }
}

impl Rule {
    fn fires(&self, req: &HttpInfo) -> bool {
        let test = |raw: &[u8]| {
            let v = apply_transforms_bytes(raw, &self.transforms);
            self.operator.test(&v)
        };
        match &self.target {
            Target::Method => test(req.method.as_bytes()),
            Target::Uri => test(req.uri.as_bytes()),
            Target::Body => test(&req.body),
            Target::AnyHeader => req.headers.iter().any(|(_, v)| test(v.as_bytes())),
            Target::Header(name) => req
                .headers
                .iter()
                .filter(|(n, _)| n.eq_ignore_ascii_case(name))
                .any(|(_, v)| test(v.as_bytes())),
            Target::DurationMs => match self.operator {
                Operator::NumGt(n) => req.duration_ms > n,
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct WafParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WafOutcome {
    Pass,
    Match { rule_id: u64, action: Action },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WafDecision {
    pub outcome: WafOutcome,
    /// Log-action rules that fired, in evaluation order.
    pub logged: Vec<u64>,
}

impl WafDecision {
    pub fn is_pass(&self) -> bool {
        self.outcome == WafOutcome::Pass
    }
}

/// Ordered rules; evaluation follows file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

#[derive(Debug, PartialEq)]
struct Token {
    text: String,
    quoted: bool,
}

fn tokenize(line: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '"' {
            chars.next();
            let mut text = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e @ ('"' | '\\')) => text.push(e),
                        Some(e) => return Err(format!("unknown escape \\{e}")),
                        None => return Err("unterminated string".into()),
                    },
                    Some(ch) => text.push(ch),
                    None => return Err("unterminated string".into()),
                }
            }
            if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                return Err("missing space after quoted argument".into());
            }
            out.push(Token { text, quoted: true });
        } else {
            let mut text = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                text.push(ch);
                chars.next();
            }
            out.push(Token {
                text,
                quoted: false,
            });
        }
    }
    Ok(out)
}

/// Rejects constructs outside the portable subset.
fn check_regex_subset(pattern: &str) -> Result<(), String> {
    let mut chars = pattern.chars();
    let mut prev = None;
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(e @ ('p' | 'P' | 'b' | 'B' | 'A' | 'z' | 'Q' | 'E' | 'k')) => {
                    return Err(format!("unsupported escape \\{e} in pattern"));
                }
                Some(e) if e.is_ascii_digit() && e != '0' => {
                    return Err("backreferences are not supported".into());
                }
                _ => {}
            }
            prev = None;
            continue;
        }
        if c == '?' && prev == Some('(') {
            return Err("inline flags and lookaround are not supported".into());
        }
        prev = Some(c);
    }
    Ok(())
}

fn parse_rule(line: &str) -> Result<Rule, String> {
    let toks = tokenize(line)?;
    if toks.first().map(|t| t.text.as_str()) != Some("RULE") || toks[0].quoted {
        return Err("expected RULE".into());
    }
    if toks.len() != 7 {
        return Err(format!("expected 7 fields, found {}", toks.len()));
    }
    let bare = |i: usize, what: &str| {
        if toks[i].quoted {
            Err(format!("{what} must not be quoted"))
        } else {
            Ok(toks[i].text.as_str())
        }
    };
    let id_text = bare(1, "id")?;
    let id: u64 = id_text
        .parse()
        .ok()
        .filter(|id| *id > 0)
        .ok_or_else(|| format!("bad rule id {id_text:?}"))?;
    let target_text = bare(2, "target")?;
    let target =
        Target::parse(target_text).ok_or_else(|| format!("unknown target {target_text:?}"))?;
    let transforms = bare(3, "transforms")?
        .split(',')
        .map(|t| {
            t.parse::<Transform>()
                .map_err(|_| format!("unknown transform {t:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let op = bare(4, "operator")?;
    let arg = &toks[5];
    let number = || {
        arg.text
            .parse::<u64>()
            .map_err(|_| format!("{op} needs a non-negative integer argument"))
    };
    let operator = match op {
        "contains" => Operator::Contains(arg.text.as_bytes().to_vec()),
        "matches" => {
            check_regex_subset(&arg.text)?;
            let re = RegexBuilder::new(&arg.text)
                .unicode(false)
                .build()
                .map_err(|e| format!("invalid regular expression: {e}"))?;
            Operator::Matches(re)
        }
        "len_gt" => Operator::LenGt(number()?),
        "num_gt" => Operator::NumGt(number()?),
        _ => return Err(format!("unknown operator {op:?}")),
    };
    let numeric_op = matches!(operator, Operator::NumGt(_));
    if numeric_op != target.is_numeric() {
        return Err(format!("operator {op} cannot be used with target {target}"));
    }
    let action = match bare(6, "action")? {
        "sandbox" => Action::Sandbox,
        "log" => Action::Log,
        a => return Err(format!("unknown action {a:?}")),
    };
    Ok(Rule {
        id,
        target,
        transforms,
        operator,
        action,
    })
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<RuleSet, WafParseError> {
        for (i, r) in rules.iter().enumerate() {
            if rules[..i].iter().any(|o| o.id == r.id) {
                return Err(WafParseError {
                    line: i + 1,
                    message: format!("duplicate rule id {}", r.id),
                });
            }
        }
        Ok(RuleSet { rules })
    }

    /// Parses the rule DSL. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<RuleSet, WafParseError> {
        let mut rules: Vec<Rule> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rule = parse_rule(trimmed).map_err(|message| WafParseError { line, message })?;
            if rules.iter().any(|r| r.id == rule.id) {
                return Err(WafParseError {
                    line,
                    message: format!("duplicate rule id {}", rule.id),
                });
            }
            rules.push(rule);
        }
        Ok(RuleSet { rules })
    }

    pub fn default_rules() -> RuleSet {
        RuleSet::parse(DEFAULT_RULES).expect("bundled ruleset parses")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Evaluates rules in order. The first sandbox rule that fires ends
    /// evaluation; log rules only accumulate.
    pub fn evaluate(&self, req: &HttpInfo) -> WafDecision {
        let mut logged = Vec::new();
        for rule in &self.rules {
            if !rule.fires(req) {
                continue;
            }
            match rule.action {
                Action::Log => logged.push(rule.id),
                Action::Sandbox => {
                    return WafDecision {
                        outcome: WafOutcome::Match {
                            rule_id: rule.id,
                            action: Action::Sandbox,
                        },
                        logged,
                    }
                }
            }
        }
        WafDecision {
            outcome: WafOutcome::Pass,
            logged,
        }
    }
}

pub fn parse_ruleset(text: &str) -> Result<RuleSet, WafParseError> {
    RuleSet::parse(text)
}

pub fn default_ruleset() -> RuleSet {
    RuleSet::default_rules()
}

/// Text of the bundled default ruleset.
pub fn default_ruleset_text() -> &'static str {
    DEFAULT_RULES
}
