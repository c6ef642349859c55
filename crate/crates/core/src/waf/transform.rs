use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    None,
    Lowercase,
    UrlDecode,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Lowercase => "lowercase",
            Transform::UrlDecode => "urldecode",
        }
    }

    pub fn apply(self, input: &[u8]) -> Vec<u8> {
        match self {
            Transform::None => input.to_vec(),
            Transform::Lowercase => input.to_ascii_lowercase(),
            Transform::UrlDecode => url_decode(input),
        }
    }
}

impl FromStr for Transform {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "none" => Ok(Transform::None),
            "lowercase" => Ok(Transform::Lowercase),
            "urldecode" => Ok(Transform::UrlDecode),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Single-pass percent decoding. `+` becomes a space; malformed `%` sequences
/// are kept as-is.
pub fn url_decode(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        match input[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' => {
                let hi = input.get(i + 1).copied().and_then(hex_val);
                let lo = input.get(i + 2).copied().and_then(hex_val);
                if let (Some(h), Some(l)) = (hi, lo) {
                    out.push(h << 4 | l);
                    i += 3;
                } else {
                    out.push(b'%');
                    i += 1;
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    out
}

/// Applies `transforms` left to right.
pub fn apply_transforms_bytes(value: &[u8], transforms: &[Transform]) -> Vec<u8> {
    transforms
        .iter()
        .fold(value.to_vec(), |acc, t| t.apply(&acc))
}

/// Text convenience wrapper; bytes that decode to invalid UTF-8 are replaced.
pub fn apply_transforms(value: &str, transforms: &[Transform]) -> String {
    String::from_utf8_lossy(&apply_transforms_bytes(value.as_bytes(), transforms)).into_owned()
}
