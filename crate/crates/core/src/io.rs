//! Canonical JSON output.
//!
//! Every `f64` is written in scientific notation with 17 significant digits
//! (`{:.16e}`) so reloading reproduces the in-memory value bit for bit.
//! Field order follows struct declaration order.

use std::io::{self, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::Result;

#[derive(Default)]
pub struct ExactFloats<F> {
    inner: F,
}

impl<F: Formatter> Formatter for ExactFloats<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Pretty-printed canonical JSON followed by a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut writer: W, value: &T) -> Result<()> {
    let fmt = ExactFloats { inner: PrettyFormatter::with_indent(b"  ") };
    let mut ser = serde_json::Serializer::with_formatter(&mut writer, fmt);
    value.serialize(&mut ser)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    write_json(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// One compact canonical JSON line (for JSONL streams), newline-terminated.
pub fn write_json_line<W: Write, T: Serialize + ?Sized>(mut writer: W, value: &T) -> Result<()> {
    let fmt = ExactFloats { inner: CompactFormatter };
    let mut ser = serde_json::Serializer::with_formatter(&mut writer, fmt);
    value.serialize(&mut ser)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: io::Read, T: DeserializeOwned>(reader: R) -> Result<T> {
    Ok(serde_json::from_reader(io::BufReader::new(reader))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floats_have_17_digits() {
        let s = to_json_string(&vec![0.5f64, 1.0 / 3.0]).unwrap();
        assert!(s.contains("5.0000000000000000e-1"), "{s}");
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
    }

    proptest! {
        #[test]
        fn float_roundtrip_is_bitwise(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = to_json_string(&x).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
