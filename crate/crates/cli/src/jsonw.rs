//! Deterministic JSON writing.
//!
//! Every file this pipeline emits must be byte-identical across reruns, so
//! serialization goes through one hand-ordered writer instead of a generic
//! serializer: field order is the call order, and floats print in a fixed
//! 17-significant-digit scientific form that round-trips `f64` exactly.

/// Formats a finite `f64` with 17 significant digits, which is always
/// enough to reproduce the exact bit pattern on parse.
pub fn fmt17(v: f64) -> String {
    debug_assert!(v.is_finite(), "refusing to serialize non-finite {v}");
    format!("{v:.16e}")
}

/// Escapes a string into a JSON string literal (without quotes).
fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Frame {
    Object,
    Array,
}

/// Minimal streaming JSON builder. Objects and arrays are opened and closed
/// explicitly; commas are managed internally. The caller promises one
/// `key()` before each value inside an object.
pub struct JsonWriter {
    out: String,
    stack: Vec<(Frame, bool)>,
    pending_key: bool,
}

impl JsonWriter {
    pub fn new() -> Self {
        JsonWriter {
            out: String::new(),
            stack: Vec::new(),
            pending_key: false,
        }
    }

    fn before_value(&mut self) {
        if self.pending_key {
            self.pending_key = false;
            return;
        }
        if let Some((frame, has_items)) = self.stack.last_mut() {
            debug_assert!(
                *frame == Frame::Array,
                "object values need a key() first"
            );
            if *has_items {
                self.out.push(',');
            }
            *has_items = true;
        }
    }

    pub fn key(&mut self, name: &str) -> &mut Self {
        let (frame, has_items) = self
            .stack
            .last_mut()
            .expect("key() outside any object");
        debug_assert!(*frame == Frame::Object, "key() inside an array");
        if *has_items {
            self.out.push(',');
        }
        *has_items = true;
        self.out.push('"');
        escape_into(&mut self.out, name);
        self.out.push_str("\":");
        self.pending_key = true;
        self
    }

    pub fn begin_object(&mut self) -> &mut Self {
        self.before_value();
        self.out.push('{');
        self.stack.push((Frame::Object, false));
        self
    }

    pub fn end_object(&mut self) -> &mut Self {
        let (frame, _) = self.stack.pop().expect("end_object on empty stack");
        debug_assert!(frame == Frame::Object);
        self.out.push('}');
        self
    }

    pub fn begin_array(&mut self) -> &mut Self {
        self.before_value();
        self.out.push('[');
        self.stack.push((Frame::Array, false));
        self
    }

    pub fn end_array(&mut self) -> &mut Self {
        let (frame, _) = self.stack.pop().expect("end_array on empty stack");
        debug_assert!(frame == Frame::Array);
        self.out.push(']');
        self
    }

    pub fn string(&mut self, v: &str) -> &mut Self {
        self.before_value();
        self.out.push('"');
        escape_into(&mut self.out, v);
        self.out.push('"');
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.before_value();
        self.out.push_str(&fmt17(v));
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.before_value();
        self.out.push_str(&v.to_string());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.before_value();
        self.out.push_str(if v { "true" } else { "false" });
        self
    }

    pub fn null(&mut self) -> &mut Self {
        self.before_value();
        self.out.push_str("null");
        self
    }

    /// `Some(x)` as a float, `None` as JSON null.
    pub fn opt_f64(&mut self, v: Option<f64>) -> &mut Self {
        match v {
            Some(x) => self.f64(x),
            None => self.null(),
        }
    }

    /// A whole `[f64]` array in one call.
    pub fn f64_array(&mut self, vs: &[f64]) -> &mut Self {
        self.begin_array();
        for &v in vs {
            self.f64(v);
        }
        self.end_array()
    }

    /// The finished document plus a trailing newline.
    pub fn finish(mut self) -> String {
        debug_assert!(self.stack.is_empty(), "unclosed JSON scopes");
        self.out.push('\n');
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tres_core::numerics::Rng;

    #[test]
    fn seventeen_digits_round_trip_exactly() {
        let mut rng = Rng::new(7);
        let mut candidates: Vec<f64> = (0..2000)
            .map(|_| {
                let mantissa = rng.uniform(-1.0, 1.0);
                let exp = rng.uniform(-300.0, 300.0) as i32;
                mantissa * 10f64.powi(exp)
            })
            .collect();
        candidates.extend_from_slice(&[
            0.0,
            -0.0,
            1.0,
            0.1,
            2.0 / 3.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            -f64::MAX,
            1e-308,
        ]);
        for v in candidates {
            let text = fmt17(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(
                back.to_bits(),
                v.to_bits(),
                "{v} printed as {text} parsed back as {back}"
            );
            let via_json: f64 = serde_json::from_str(&text).unwrap();
            assert_eq!(via_json.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn writer_produces_parseable_documents() {
        let mut w = JsonWriter::new();
        w.begin_object();
        w.key("name").string("he said \"hi\"\n");
        w.key("count").usize(3);
        w.key("seed").u64(u64::MAX);
        w.key("ratio").opt_f64(None);
        w.key("values").f64_array(&[1.5, -0.25]);
        w.key("nested").begin_object();
        w.key("flag").bool(true);
        w.end_object();
        w.key("empty").begin_array();
        w.end_array();
        w.end_object();
        let text = w.finish();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["name"], "he said \"hi\"\n");
        assert_eq!(v["count"], 3);
        assert_eq!(v["seed"].as_u64(), Some(u64::MAX));
        assert!(v["ratio"].is_null());
        assert_eq!(v["values"][1].as_f64(), Some(-0.25));
        assert_eq!(v["nested"]["flag"], true);
        assert_eq!(v["empty"].as_array().unwrap().len(), 0);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn identical_calls_produce_identical_bytes() {
        let build = || {
            let mut w = JsonWriter::new();
            w.begin_object();
            w.key("x").f64(0.1 + 0.2);
            w.end_object();
            w.finish()
        };
        assert_eq!(build(), build());
    }
}
