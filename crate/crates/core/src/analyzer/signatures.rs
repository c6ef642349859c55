//! Raw byte payload signatures.

const DEFAULT_SIGNATURES: &str = include_str!("../../data/signatures.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub id: u32,
    pub pattern: Vec<u8>,
}

impl Signature {
    pub fn matches(&self, payload: &[u8]) -> bool {
        !self.pattern.is_empty()
            && payload
                .windows(self.pattern.len())
                .any(|w| w == self.pattern.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("signature line {line}: {message}")]
pub struct SignatureError {
    pub line: usize,
    pub message: String,
}

fn unescape(s: &str) -> Result<Vec<u8>, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b'x') => {
                let hex = s.get(i + 2..i + 4).ok_or("truncated \\x escape")?;
                let b =
                    u8::from_str_radix(hex, 16).map_err(|_| format!("bad \\x escape {hex:?}"))?;
                out.push(b);
                i += 4;
            }
            _ => return Err("unknown escape".into()),
        }
    }
    Ok(out)
}

/// Parses `<id> <pattern>` lines. Duplicate ids and empty patterns are errors.
pub fn parse_signatures(text: &str) -> Result<Vec<Signature>, SignatureError> {
    let mut out: Vec<Signature> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| SignatureError { line, message };
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let (id, pattern) = trimmed
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| err("expected `<id> <pattern>`".into()))?;
        let id: u32 = id.parse().map_err(|_| err(format!("bad id {id:?}")))?;
        let pattern = unescape(pattern).map_err(err)?;
        if pattern.is_empty() {
            return Err(err("empty pattern".into()));
        }
        if out.iter().any(|s| s.id == id) {
            return Err(err(format!("duplicate signature id {id}")));
        }
        out.push(Signature { id, pattern });
    }
    Ok(out)
}

pub fn default_signatures() -> Vec<Signature> {
    parse_signatures(DEFAULT_SIGNATURES).expect("bundled signature list parses")
}
