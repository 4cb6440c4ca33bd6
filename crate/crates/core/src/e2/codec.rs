use thiserror::Error;

use super::{ControlOutcome, E2Message, MessageKind, SubscriptionSpec, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION};
use crate::metrics::{Layer, MetricSample, MetricSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{what} has {len} entries, limit is 65535")]
    OversizeList { what: &'static str, len: usize },
    #[error("{what} is {len} bytes, limit is 65535")]
    OversizeText { what: &'static str, len: usize },
    #[error("payload of {0} bytes exceeds the 65535-byte frame limit")]
    FrameTooLarge(usize),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// The buffer holds a valid prefix; more bytes are needed.
    #[error("incomplete frame, {needed} more bytes needed")]
    Incomplete { needed: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("declared payload length {0} exceeds 65535")]
    FrameTooLarge(u32),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
}

impl DecodeError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, DecodeError::Incomplete { .. })
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn count(&mut self, what: &'static str, len: usize) -> Result<(), EncodeError> {
        let n = u16::try_from(len).map_err(|_| EncodeError::OversizeList { what, len })?;
        self.u16(n);
        Ok(())
    }
    fn text(&mut self, what: &'static str, s: &str) -> Result<(), EncodeError> {
        let n = u16::try_from(s.len()).map_err(|_| EncodeError::OversizeText { what, len: s.len() })?;
        self.u16(n);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn bytes(&mut self, what: &'static str, b: &[u8]) -> Result<(), EncodeError> {
        self.count(what, b.len())?;
        self.buf.extend_from_slice(b);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Malformed("field runs past end of payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<String, DecodeError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::Malformed("text is not UTF-8"))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.u16()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Malformed("boolean byte must be 0 or 1")),
        }
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn valid_latency(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Encoded size of one sample inside an Indication payload.
pub fn encoded_sample_len(s: &MetricSample) -> usize {
    8 + 1 + 8 + 2 + s.ue_id.len() + 2 + s.cell_id.len()
}

fn put_metric_set(w: &mut Writer, set: MetricSet) {
    let ids: Vec<u8> = set.layers().map(Layer::id).collect();
    w.u16(ids.len() as u16);
    w.buf.extend_from_slice(&ids);
}

fn get_metric_set(r: &mut Reader<'_>) -> Result<MetricSet, DecodeError> {
    let n = r.u16()?;
    let mut set = MetricSet::EMPTY;
    for _ in 0..n {
        let layer = Layer::from_id(r.u8()?).ok_or(DecodeError::Malformed("unknown metric-set id"))?;
        set = set.with(layer);
    }
    Ok(set)
}

fn put_spec(w: &mut Writer, spec: &SubscriptionSpec) -> Result<(), EncodeError> {
    if !spec.is_valid() {
        return Err(EncodeError::InvalidField("subscription needs report_period >= 1 and a non-empty metric set"));
    }
    w.u32(spec.report_period_ms);
    put_metric_set(w, spec.metric_set);
    match &spec.cell_filter {
        None => w.u8(0),
        Some(cell) => {
            w.u8(1);
            w.text("cell filter", cell)?;
        }
    }
    Ok(())
}

fn get_spec(r: &mut Reader<'_>) -> Result<SubscriptionSpec, DecodeError> {
    let report_period_ms = r.u32()?;
    let metric_set = get_metric_set(r)?;
    let cell_filter = match r.u8()? {
        0 => None,
        1 => Some(r.text()?),
        _ => return Err(DecodeError::Malformed("option tag must be 0 or 1")),
    };
    let spec = SubscriptionSpec { report_period_ms, metric_set, cell_filter };
    if !spec.is_valid() {
        return Err(DecodeError::Malformed("subscription needs report_period >= 1 and a non-empty metric set"));
    }
    Ok(spec)
}

fn put_payload(w: &mut Writer, msg: &E2Message) -> Result<(), EncodeError> {
    match msg {
        E2Message::Setup { agent_id, ran_functions } => {
            w.text("agent_id", agent_id)?;
            w.bytes("ran_functions", ran_functions)?;
        }
        E2Message::SetupAck { ric_id } => w.text("ric_id", ric_id)?,
        E2Message::SubscriptionRequest { sub_id, spec } => {
            w.u32(*sub_id);
            put_spec(w, spec)?;
        }
        E2Message::SubscriptionResponse { sub_id, accepted, reason } => {
            w.u32(*sub_id);
            w.u8(u8::from(*accepted));
            w.text("reason", reason)?;
        }
        E2Message::Indication { sub_id, seq, samples } => {
            w.u32(*sub_id);
            w.u64(*seq);
            w.count("samples", samples.len())?;
            for s in samples {
                if !valid_latency(s.latency) {
                    return Err(EncodeError::InvalidField("latency must be finite and non-negative"));
                }
                w.u64(s.t);
                w.u8(s.layer.id());
                w.u64(s.latency.to_bits());
                w.text("ue_id", &s.ue_id)?;
                w.text("cell_id", &s.cell_id)?;
            }
        }
        E2Message::ControlRequest { ctrl_id, target_cell, action } => {
            w.u32(*ctrl_id);
            w.text("target_cell", target_cell)?;
            w.bytes("action", action)?;
        }
        E2Message::ControlAck { ctrl_id, outcome } => {
            w.u32(*ctrl_id);
            w.u8(*outcome as u8);
        }
        E2Message::Disconnect { reason } => w.u8(*reason),
        E2Message::ProtocolError { code, detail } => {
            w.u16(*code);
            w.text("detail", detail)?;
        }
    }
    Ok(())
}

fn get_payload(kind: MessageKind, r: &mut Reader<'_>) -> Result<E2Message, DecodeError> {
    Ok(match kind {
        MessageKind::Setup => E2Message::Setup { agent_id: r.text()?, ran_functions: r.bytes()? },
        MessageKind::SetupAck => E2Message::SetupAck { ric_id: r.text()? },
        MessageKind::SubscriptionRequest => E2Message::SubscriptionRequest { sub_id: r.u32()?, spec: get_spec(r)? },
        MessageKind::SubscriptionResponse => E2Message::SubscriptionResponse {
            sub_id: r.u32()?,
            accepted: r.bool()?,
            reason: r.text()?,
        },
        MessageKind::Indication => {
            let sub_id = r.u32()?;
            let seq = r.u64()?;
            let n = r.u16()? as usize;
            // each sample is at least 21 bytes; refuse counts the payload cannot hold
            if n * 21 > r.buf.len() - r.pos {
                return Err(DecodeError::Malformed("sample count exceeds payload"));
            }
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let t = r.u64()?;
                let layer = Layer::from_id(r.u8()?).ok_or(DecodeError::Malformed("unknown layer id"))?;
                let latency = f64::from_bits(r.u64()?);
                if !valid_latency(latency) {
                    return Err(DecodeError::Malformed("latency must be finite and non-negative"));
                }
                samples.push(MetricSample { t, layer, latency, ue_id: r.text()?, cell_id: r.text()? });
            }
            E2Message::Indication { sub_id, seq, samples }
        }
        MessageKind::ControlRequest => E2Message::ControlRequest {
            ctrl_id: r.u32()?,
            target_cell: r.text()?,
            action: r.bytes()?,
        },
        MessageKind::ControlAck => E2Message::ControlAck {
            ctrl_id: r.u32()?,
            outcome: ControlOutcome::from_u8(r.u8()?).ok_or(DecodeError::Malformed("unknown control outcome"))?,
        },
        MessageKind::Disconnect => E2Message::Disconnect { reason: r.u8()? },
        MessageKind::ProtocolError => E2Message::ProtocolError { code: r.u16()?, detail: r.text()? },
    })
}

/// Encode one message into a complete frame. Deterministic; on error no
/// bytes are produced.
pub fn encode(msg: &E2Message) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer { buf: Vec::with_capacity(64) };
    w.buf.extend_from_slice(&MAGIC);
    w.u8(VERSION);
    w.u8(msg.kind() as u8);
    w.u32(0);
    put_payload(&mut w, msg)?;
    let len = w.buf.len() - HEADER_LEN;
    if len > MAX_PAYLOAD {
        return Err(EncodeError::FrameTooLarge(len));
    }
    w.buf[4..8].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(w.buf)
}

/// Decode the first frame in `buf`, returning the message and the number of
/// bytes it occupied. Never reads past the declared frame length.
pub fn decode(buf: &[u8]) -> Result<(E2Message, usize), DecodeError> {
    for (i, m) in MAGIC.iter().enumerate() {
        match buf.get(i) {
            Some(b) if b != m => return Err(DecodeError::BadMagic),
            Some(_) => {}
            None => return Err(DecodeError::Incomplete { needed: HEADER_LEN - buf.len() }),
        }
    }
    match buf.get(2) {
        Some(&v) if v != VERSION => return Err(DecodeError::UnsupportedVersion(v)),
        Some(_) => {}
        None => return Err(DecodeError::Incomplete { needed: HEADER_LEN - buf.len() }),
    }
    let kind = match buf.get(3) {
        Some(&k) => MessageKind::from_u8(k).ok_or(DecodeError::UnknownKind(k))?,
        None => return Err(DecodeError::Incomplete { needed: HEADER_LEN - buf.len() }),
    };
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::Incomplete { needed: HEADER_LEN - buf.len() });
    }
    let declared = u32::from_be_bytes(buf[4..8].try_into().unwrap());
    if declared as usize > MAX_PAYLOAD {
        return Err(DecodeError::FrameTooLarge(declared));
    }
    let total = HEADER_LEN + declared as usize;
    if buf.len() < total {
        return Err(DecodeError::Incomplete { needed: total - buf.len() });
    }
    let mut r = Reader { buf: &buf[HEADER_LEN..total], pos: 0 };
    let msg = get_payload(kind, &mut r)?;
    if !r.done() {
        return Err(DecodeError::Malformed("trailing bytes inside frame"));
    }
    Ok((msg, total))
}

/// Accumulates bytes from a stream and yields complete messages.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. After an
    /// error the stream is unusable.
    pub fn next_message(&mut self) -> Result<Option<E2Message>, DecodeError> {
        match decode(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(e) if e.is_incomplete() => Ok(None),
            Err(e) => Err(e),
        }
    }
}
