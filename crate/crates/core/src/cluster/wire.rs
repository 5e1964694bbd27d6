//! Message framing for everything shuffled between workers, and the ledger
//! that charges each framed message to its link.
//!
//! Frame: `PTDM`, phase u8, source u16, destination u16, payload length u32,
//! then the payload. All integers little-endian.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CandidateEmission, PartialScore, PartialScoreEmission};
use crate::error::{PtdError, Result};
use crate::geometry::{AttributeVector, Instance, ObjectId};
use crate::oracle::ScoredObject;

pub const MESSAGE_MAGIC: &[u8; 4] = b"PTDM";
pub const MESSAGE_HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Candidates = 1,
    Threshold = 2,
    PartialScores = 3,
    Refined = 4,
    Direct = 5,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Candidates,
        Phase::Threshold,
        Phase::PartialScores,
        Phase::Refined,
        Phase::Direct,
    ];

    fn from_u8(v: u8) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| *p as u8 == v)
            .ok_or_else(|| PtdError::Decode(format!("unknown phase {v}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Candidate(CandidateEmission),
    Threshold(f64),
    Partial(PartialScoreEmission),
    Refined(ScoredObject),
    Direct(ScoredObject),
}

impl Payload {
    pub fn phase(&self) -> Phase {
        match self {
            Payload::Candidate(_) => Phase::Candidates,
            Payload::Threshold(_) => Phase::Threshold,
            Payload::Partial(_) => Phase::PartialScores,
            Payload::Refined(_) => Phase::Refined,
            Payload::Direct(_) => Phase::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: u16,
    pub dst: u16,
    pub payload: Payload,
}

struct Writer(Vec<u8>);

impl Writer {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| PtdError::Decode("truncated payload".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(PtdError::Decode(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

const CANDIDATE_FIXED: usize = 7 * 8;

fn encode_payload(p: &Payload, w: &mut Writer) {
    match p {
        Payload::Candidate(c) => {
            w.u64(c.object_id.0);
            w.u64(c.instance.instance_id as u64);
            w.f64(c.instance.prob);
            for &x in c.instance.attrs.as_slice() {
                w.f64(x);
            }
            w.u64(c.eid);
            w.f64(c.lb);
            w.f64(c.ub);
            w.f64(c.tau);
        }
        Payload::Threshold(t) => w.f64(*t),
        Payload::Partial(e) => {
            w.u64(e.object_id.0);
            match e.value {
                PartialScore::Pruned => w.u8(0),
                PartialScore::Score { lb, delta, tau } => {
                    w.u8(1);
                    w.f64(lb);
                    w.f64(delta);
                    w.f64(tau);
                }
            }
        }
        Payload::Refined(s) | Payload::Direct(s) => {
            w.u64(s.object_id.0);
            w.f64(s.score);
        }
    }
}

fn decode_payload(phase: Phase, buf: &[u8], key: u16) -> Result<Payload> {
    let mut r = Reader { buf, pos: 0 };
    let payload = match phase {
        Phase::Candidates => {
            let extra = buf
                .len()
                .checked_sub(CANDIDATE_FIXED)
                .filter(|e| e % 8 == 0 && *e > 0);
            let dims = extra.ok_or_else(|| {
                PtdError::Decode(format!("bad candidate payload length {}", buf.len()))
            })? / 8;
            let object_id = ObjectId(r.u64()?);
            let iid = u32::try_from(r.u64()?)
                .map_err(|_| PtdError::Decode("instance id out of range".into()))?;
            let prob = r.f64()?;
            let attrs = (0..dims).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let attrs = AttributeVector::new(attrs).map_err(|e| PtdError::Decode(e.to_string()))?;
            let instance = Instance::new(object_id, iid, attrs, prob)
                .map_err(|e| PtdError::Decode(e.to_string()))?;
            Payload::Candidate(CandidateEmission {
                key: key as u32,
                object_id,
                instance,
                eid: r.u64()?,
                lb: r.f64()?,
                ub: r.f64()?,
                tau: r.f64()?,
            })
        }
        Phase::Threshold => Payload::Threshold(r.f64()?),
        Phase::PartialScores => {
            let object_id = ObjectId(r.u64()?);
            let value = match r.u8()? {
                0 => PartialScore::Pruned,
                1 => PartialScore::Score {
                    lb: r.f64()?,
                    delta: r.f64()?,
                    tau: r.f64()?,
                },
                f => return Err(PtdError::Decode(format!("bad presence flag {f}"))),
            };
            Payload::Partial(PartialScoreEmission { object_id, value })
        }
        Phase::Refined | Phase::Direct => {
            let s = ScoredObject {
                object_id: ObjectId(r.u64()?),
                score: r.f64()?,
            };
            if phase == Phase::Refined {
                Payload::Refined(s)
            } else {
                Payload::Direct(s)
            }
        }
    };
    r.finish()?;
    Ok(payload)
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64));
        encode_payload(&self.payload, &mut w);
        let body = w.0;
        let mut out = Vec::with_capacity(MESSAGE_HEADER_LEN + body.len());
        out.extend_from_slice(MESSAGE_MAGIC);
        out.push(self.payload.phase() as u8);
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MESSAGE_HEADER_LEN {
            return Err(PtdError::Decode("truncated message header".into()));
        }
        if &bytes[..4] != MESSAGE_MAGIC {
            return Err(PtdError::Decode("bad message magic".into()));
        }
        let phase = Phase::from_u8(bytes[4])?;
        let src = u16::from_le_bytes([bytes[5], bytes[6]]);
        let dst = u16::from_le_bytes([bytes[7], bytes[8]]);
        let len = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        if bytes.len() != MESSAGE_HEADER_LEN + len {
            return Err(PtdError::Decode(format!(
                "payload length {len} disagrees with frame size {}",
                bytes.len() - MESSAGE_HEADER_LEN
            )));
        }
        let payload = decode_payload(phase, &bytes[MESSAGE_HEADER_LEN..], dst)?;
        Ok(Message { src, dst, payload })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub src: u16,
    pub dst: u16,
    pub phase: Phase,
    pub messages: u64,
    pub bytes: u64,
}

/// Per (source, destination, phase) message counts and byte totals.
/// Messages a worker sends to itself are recorded but never leave the
/// machine, so the totals below leave them out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    links: BTreeMap<(u16, u16, Phase), LinkStats>,
}

impl CommLedger {
    pub fn charge(&mut self, src: u16, dst: u16, phase: Phase, bytes: usize) {
        let s = self.links.entry((src, dst, phase)).or_default();
        s.messages += 1;
        s.bytes += bytes as u64;
    }

    pub fn link(&self, src: u16, dst: u16, phase: Phase) -> LinkStats {
        self.links
            .get(&(src, dst, phase))
            .copied()
            .unwrap_or_default()
    }

    fn sum(&self, f: impl Fn(&(u16, u16, Phase)) -> bool) -> LinkStats {
        self.links
            .iter()
            .filter(|(k, _)| f(k))
            .fold(LinkStats::default(), |acc, (_, s)| LinkStats {
                messages: acc.messages + s.messages,
                bytes: acc.bytes + s.bytes,
            })
    }

    /// Bytes and messages that crossed between distinct workers.
    pub fn total(&self) -> LinkStats {
        self.sum(|(s, d, _)| s != d)
    }

    pub fn total_including_local(&self) -> LinkStats {
        self.sum(|_| true)
    }

    pub fn phase_total(&self, phase: Phase) -> LinkStats {
        self.sum(|(s, d, p)| s != d && *p == phase)
    }

    pub fn records(&self) -> Vec<LinkRecord> {
        self.links
            .iter()
            .map(|(&(src, dst, phase), s)| LinkRecord {
                src,
                dst,
                phase,
                messages: s.messages,
                bytes: s.bytes,
            })
            .collect()
    }
}
