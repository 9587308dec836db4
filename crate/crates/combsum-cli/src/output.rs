//! CSV assembly and atomic output.

use std::io::Write;
use std::path::PathBuf;

/// Floats print with 17 significant digits so output files replay
/// bit-exactly through a parse.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Quotes a text field if it would break the CSV shape.
pub fn text_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// 64-bit FNV-1a, used to stamp outputs with a hash of the exact
/// configuration that produced them.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Accumulates a CSV document in memory, then writes it in one step:
/// directly for stdout, or via a sibling temp file and rename so a crash
/// never leaves a half-written table behind.
pub struct Csv {
    out: Option<PathBuf>,
    buf: String,
}

impl Csv {
    pub fn new(out: Option<PathBuf>) -> Self {
        Csv { out, buf: String::new() }
    }

    /// `# key=value` metadata line; consumers skip `#` lines.
    pub fn comment(&mut self, line: &str) {
        self.buf.push_str("# ");
        self.buf.push_str(line);
        self.buf.push('\n');
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: impl IntoIterator<Item = S>) {
        let mut first = true;
        for field in fields {
            if !first {
                self.buf.push(',');
            }
            self.buf.push_str(field.as_ref());
            first = false;
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> std::io::Result<()> {
        match self.out {
            None => std::io::stdout().write_all(self.buf.as_bytes()),
            Some(path) => {
                let mut tmp = path.clone().into_os_string();
                tmp.push(".tmp");
                let tmp = PathBuf::from(tmp);
                std::fs::write(&tmp, self.buf.as_bytes())?;
                std::fs::rename(&tmp, &path)
            }
        }
    }
}
