//! OSC 1.0 message codec (messages only, no bundles).
//!
//! Layout: NUL-terminated address padded to 4 bytes, a type-tag string that
//! starts with `,` padded the same way, then the arguments. `i` and `f` are
//! big-endian 32-bit, `s` is a padded NUL-terminated string, `T`/`F` carry no
//! payload.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    True,
    False,
}

impl OscArg {
    pub fn type_tag(&self) -> u8 {
        match self {
            OscArg::Int(_) => b'i',
            OscArg::Float(_) => b'f',
            OscArg::Str(_) => b's',
            OscArg::True => b'T',
            OscArg::False => b'F',
        }
    }

    pub fn bool(b: bool) -> Self {
        if b {
            OscArg::True
        } else {
            OscArg::False
        }
    }
}

/// Floats compare by bit pattern so NaN payloads survive round-trips.
impl PartialEq for OscArg {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (OscArg::Int(a), OscArg::Int(b)) => a == b,
            (OscArg::Float(a), OscArg::Float(b)) => a.to_bits() == b.to_bits(),
            (OscArg::Str(a), OscArg::Str(b)) => a == b,
            (OscArg::True, OscArg::True) | (OscArg::False, OscArg::False) => true,
            _ => false,
        }
    }
}

impl Eq for OscArg {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        OscMessage {
            address: address.into(),
            args,
        }
    }
}

/// Printable ASCII without spaces or `#`.
pub fn is_address_safe(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| (0x21..=0x7e).contains(&b) && b != b'#')
}

pub fn validate_address(address: &str) -> Result<()> {
    if !address.starts_with('/') {
        return Err(Error::OscEncode(format!("address {address:?} must start with '/'")));
    }
    if !is_address_safe(address) {
        return Err(Error::OscEncode(format!(
            "address {address:?} must be printable ASCII without spaces or '#'"
        )));
    }
    Ok(())
}

fn padded_len(n: usize) -> usize {
    (n + 4) & !3
}

fn push_padded_str(out: &mut Vec<u8>, s: &[u8]) {
    let total = padded_len(s.len());
    out.extend_from_slice(s);
    out.resize(out.len() + (total - s.len()), 0);
}

pub fn encode_osc(message: &OscMessage) -> Result<Vec<u8>> {
    validate_address(&message.address)?;
    let mut out = Vec::with_capacity(64);
    push_padded_str(&mut out, message.address.as_bytes());
    let mut tags = Vec::with_capacity(message.args.len() + 1);
    tags.push(b',');
    tags.extend(message.args.iter().map(OscArg::type_tag));
    push_padded_str(&mut out, &tags);
    for arg in &message.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Str(s) => {
                if s.as_bytes().contains(&0) {
                    return Err(Error::OscEncode("string argument contains NUL".into()));
                }
                push_padded_str(&mut out, s.as_bytes());
            }
            OscArg::True | OscArg::False => {}
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn string(&mut self) -> Result<&'a [u8]> {
        let rest = &self.buf[self.pos..];
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::OscDecode(format!("unterminated string at byte {}", self.pos)))?;
        let total = padded_len(nul);
        if total > rest.len() {
            return Err(Error::OscDecode(format!(
                "string padding overruns frame at byte {}",
                self.pos
            )));
        }
        if rest[nul..total].iter().any(|&b| b != 0) {
            return Err(Error::OscDecode(format!("non-zero padding at byte {}", self.pos + nul)));
        }
        self.pos += total;
        Ok(&rest[..nul])
    }

    fn word(&mut self) -> Result<[u8; 4]> {
        let bytes = self
            .buf
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::OscDecode(format!("truncated argument at byte {}", self.pos)))?;
        self.pos += 4;
        Ok(bytes.try_into().expect("4 bytes"))
    }
}

pub fn decode_osc(bytes: &[u8]) -> Result<OscMessage> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::OscDecode(format!(
            "frame length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let address = std::str::from_utf8(r.string()?)
        .map_err(|e| Error::OscDecode(format!("address: {e}")))?
        .to_string();
    validate_address(&address).map_err(|e| Error::OscDecode(e.to_string()))?;
    let tags = r.string()?;
    let Some((b',', tags)) = tags.split_first() else {
        return Err(Error::OscDecode("type tag string must start with ','".into()));
    };
    let mut args = Vec::with_capacity(tags.len());
    for &tag in tags {
        args.push(match tag {
            b'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            b'f' => OscArg::Float(f32::from_be_bytes(r.word()?)),
            b's' => OscArg::Str(
                std::str::from_utf8(r.string()?)
                    .map_err(|e| Error::OscDecode(format!("string argument: {e}")))?
                    .to_string(),
            ),
            b'T' => OscArg::True,
            b'F' => OscArg::False,
            other => return Err(Error::OscDecode(format!("unsupported type tag {:?}", other as char))),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::OscDecode(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(OscMessage { address, args })
}
