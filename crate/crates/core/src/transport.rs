//! Host ↔ device path for CXL.mem requests carried over custom NVMe
//! commands.
//!
//! Wire layouts (little-endian):
//!
//! ```text
//! command    (16 B): opcode u8 | flags u8 | tag u16 | address u64 | reserved [u8; 4]
//! completion (12 B): tag u16 | status u16 | total_latency_ns u32 | cxl_overhead_ns u32
//! ```
//!
//! `flags` bit 0 is `payload_present`; data payloads are never transferred
//! so it stays clear in normal operation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::{MemoryRequest, Opcode};

pub const COMMAND_BYTES: usize = 16;
pub const COMPLETION_BYTES: usize = 12;
pub const DEFAULT_INTERFACE_OVERHEAD_NS: u64 = 40;

const FLAG_PAYLOAD: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("address {address:#x} is outside the CXL window")]
    NotCxl { address: u64 },
    #[error("tag {0} is already outstanding")]
    DuplicateTag(u16),
    #[error("completion tag {got} does not match command tag {expected}")]
    TagMismatch { expected: u16, got: u16 },
    #[error("device latency {0} ns does not fit the 32-bit completion field")]
    LatencyOverflow(u64),
    #[error("device error on tag {tag}: {msg}")]
    Device { tag: u16, msg: String },
    #[error("frequency must be positive")]
    ZeroFrequency,
    #[error("{ns} ns at {frequency_hz} Hz overflows a 64-bit cycle count")]
    CycleOverflow { ns: u64, frequency_hz: u64 },
    #[error("malformed {what}: {msg}")]
    Decode { what: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CxlOpcode {
    CxlRead = 0x01,
    CxlWrite = 0x02,
}

impl From<Opcode> for CxlOpcode {
    fn from(op: Opcode) -> Self {
        match op {
            Opcode::Read => CxlOpcode::CxlRead,
            Opcode::Write => CxlOpcode::CxlWrite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CxlCommand {
    pub opcode: CxlOpcode,
    pub memory_address: u64,
    pub request_tag: u16,
    pub payload_present: bool,
}

impl CxlCommand {
    pub fn to_bytes(&self) -> [u8; COMMAND_BYTES] {
        let mut b = [0u8; COMMAND_BYTES];
        b[0] = self.opcode as u8;
        b[1] = if self.payload_present { FLAG_PAYLOAD } else { 0 };
        b[2..4].copy_from_slice(&self.request_tag.to_le_bytes());
        b[4..12].copy_from_slice(&self.memory_address.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, TransportError> {
        let err = |msg: String| TransportError::Decode { what: "command", msg };
        if b.len() != COMMAND_BYTES {
            return Err(err(format!("expected {COMMAND_BYTES} bytes, got {}", b.len())));
        }
        let opcode = match b[0] {
            0x01 => CxlOpcode::CxlRead,
            0x02 => CxlOpcode::CxlWrite,
            x => return Err(err(format!("unknown opcode {x:#04x}"))),
        };
        if b[1] & !FLAG_PAYLOAD != 0 {
            return Err(err(format!("reserved flag bits set: {:#04x}", b[1])));
        }
        if b[12..16] != [0; 4] {
            return Err(err("reserved bytes are not zero".into()));
        }
        let memory_address = u64::from_le_bytes(b[4..12].try_into().unwrap());
        if memory_address & 63 != 0 {
            return Err(err(format!("address {memory_address:#x} is not 64 B aligned")));
        }
        Ok(Self {
            opcode,
            memory_address,
            request_tag: u16::from_le_bytes([b[2], b[3]]),
            payload_present: b[1] & FLAG_PAYLOAD != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum CompletionStatus {
    Ok = 0,
    DeviceError = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CxlCompletion {
    pub request_tag: u16,
    pub total_device_latency_ns: u32,
    /// Firmware logic portion of the total (excludes NAND waits).
    pub cxl_op_overhead_ns: u32,
    pub status: CompletionStatus,
}

impl CxlCompletion {
    pub fn to_bytes(&self) -> [u8; COMPLETION_BYTES] {
        let mut b = [0u8; COMPLETION_BYTES];
        b[0..2].copy_from_slice(&self.request_tag.to_le_bytes());
        b[2..4].copy_from_slice(&(self.status as u16).to_le_bytes());
        b[4..8].copy_from_slice(&self.total_device_latency_ns.to_le_bytes());
        b[8..12].copy_from_slice(&self.cxl_op_overhead_ns.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, TransportError> {
        let err = |msg: String| TransportError::Decode { what: "completion", msg };
        if b.len() != COMPLETION_BYTES {
            return Err(err(format!("expected {COMPLETION_BYTES} bytes, got {}", b.len())));
        }
        let status = match u16::from_le_bytes([b[2], b[3]]) {
            0 => CompletionStatus::Ok,
            1 => CompletionStatus::DeviceError,
            x => return Err(err(format!("unknown status {x}"))),
        };
        let c = Self {
            request_tag: u16::from_le_bytes([b[0], b[1]]),
            status,
            total_device_latency_ns: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            cxl_op_overhead_ns: u32::from_le_bytes(b[8..12].try_into().unwrap()),
        };
        if c.cxl_op_overhead_ns > c.total_device_latency_ns {
            return Err(err("overhead exceeds total latency".into()));
        }
        Ok(c)
    }
}

/// Device-measured timing of one command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceResponse {
    pub total_ns: u64,
    pub cxl_op_overhead_ns: u64,
}

/// Anything that can execute a decoded command synchronously.
pub trait CxlDevice {
    fn execute(&mut self, opcode: CxlOpcode, address: u64) -> Result<DeviceResponse, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceModel {
    pub interface_overhead_ns: u64,
}

impl Default for InterfaceModel {
    fn default() -> Self {
        Self { interface_overhead_ns: DEFAULT_INTERFACE_OVERHEAD_NS }
    }
}

/// Builds the command for a request: opcode mapped, address masked to 64 B.
pub fn encode(request: &MemoryRequest, tag: u16) -> CxlCommand {
    CxlCommand {
        opcode: request.opcode.into(),
        memory_address: request.address & !63,
        request_tag: tag,
        payload_present: false,
    }
}

/// Device latency plus the fixed CXL.mem interface overhead.
pub fn finalize_latency(completion: &CxlCompletion, interface: &InterfaceModel) -> Result<u64, TransportError> {
    match completion.status {
        CompletionStatus::Ok => Ok(completion.total_device_latency_ns as u64 + interface.interface_overhead_ns),
        CompletionStatus::DeviceError => {
            Err(TransportError::Device { tag: completion.request_tag, msg: "device reported an error".into() })
        }
    }
}

/// `ceil(ns * frequency_hz / 1e9)` in exact integer arithmetic.
pub fn ns_to_cycles(ns: u64, frequency_hz: u64) -> Result<u64, TransportError> {
    if frequency_hz == 0 {
        return Err(TransportError::ZeroFrequency);
    }
    let cycles = (ns as u128 * frequency_hz as u128).div_ceil(1_000_000_000);
    u64::try_from(cycles).map_err(|_| TransportError::CycleOverflow { ns, frequency_hz })
}

/// Host side of the handshake: tags commands, issues them one at a time
/// and checks completions.
#[derive(Debug, Clone)]
pub struct Transport {
    cxl_base: u64,
    cxl_limit: u64,
    pub interface: InterfaceModel,
    next_tag: u16,
    outstanding: HashSet<u16>,
    issued: u64,
}

impl Transport {
    pub fn new(cxl_base: u64, cxl_limit: u64, interface: InterfaceModel) -> Self {
        Self { cxl_base, cxl_limit, interface, next_tag: 0, outstanding: HashSet::new(), issued: 0 }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Encodes a request bound for the CXL window with a fresh tag.
    pub fn encode(&mut self, request: &MemoryRequest) -> Result<CxlCommand, TransportError> {
        let line = request.address & !63;
        if line < self.cxl_base || line >= self.cxl_limit {
            return Err(TransportError::NotCxl { address: request.address });
        }
        let tag = self.next_tag;
        self.next_tag = self.next_tag.wrapping_add(1);
        Ok(encode(request, tag))
    }

    /// Synchronous round trip: the caller's clock does not move until this returns.
    pub fn issue(&mut self, cmd: &CxlCommand, device: &mut impl CxlDevice) -> Result<CxlCompletion, TransportError> {
        if !self.outstanding.insert(cmd.request_tag) {
            return Err(TransportError::DuplicateTag(cmd.request_tag));
        }
        // the device sees exactly what crossed the wire
        let wire = CxlCommand::from_bytes(&cmd.to_bytes())?;
        let result = device.execute(wire.opcode, wire.memory_address);
        self.outstanding.remove(&cmd.request_tag);
        self.issued += 1;
        let completion = match result {
            Ok(resp) => {
                let total = u32::try_from(resp.total_ns).map_err(|_| TransportError::LatencyOverflow(resp.total_ns))?;
                let overhead = u32::try_from(resp.cxl_op_overhead_ns)
                    .map_err(|_| TransportError::LatencyOverflow(resp.cxl_op_overhead_ns))?;
                CxlCompletion {
                    request_tag: cmd.request_tag,
                    total_device_latency_ns: total,
                    cxl_op_overhead_ns: overhead,
                    status: CompletionStatus::Ok,
                }
            }
            Err(msg) => return Err(TransportError::Device { tag: cmd.request_tag, msg }),
        };
        let echoed = CxlCompletion::from_bytes(&completion.to_bytes())?;
        if echoed.request_tag != cmd.request_tag {
            return Err(TransportError::TagMismatch { expected: cmd.request_tag, got: echoed.request_tag });
        }
        Ok(echoed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(opcode: Opcode, address: u64) -> MemoryRequest {
        MemoryRequest { core_id: 0, thread_id: 0, opcode, address, issue_cycle: 0 }
    }

    struct Fixed(u64, u64);
    impl CxlDevice for Fixed {
        fn execute(&mut self, _: CxlOpcode, _: u64) -> Result<DeviceResponse, String> {
            Ok(DeviceResponse { total_ns: self.0, cxl_op_overhead_ns: self.1 })
        }
    }

    struct Broken;
    impl CxlDevice for Broken {
        fn execute(&mut self, _: CxlOpcode, a: u64) -> Result<DeviceResponse, String> {
            Err(format!("unmapped device page at {a:#x}"))
        }
    }

    #[test]
    fn encode_examples() {
        let w = encode(&req(Opcode::Write, 0x4000_0040), 0);
        assert_eq!(w.opcode as u8, 0x02);
        assert_eq!(w.memory_address, 0x4000_0040);
        let r = encode(&req(Opcode::Read, 0x4000_0000), 0);
        assert_eq!(r.opcode as u8, 0x01);
        assert_eq!(r.memory_address, 0x4000_0000);
        let unaligned = encode(&req(Opcode::Write, 0x4000_0041), 0);
        assert_eq!(unaligned.to_bytes(), w.to_bytes());
    }

    #[test]
    fn finalize_examples() {
        let c = |t| CxlCompletion {
            request_tag: 0,
            total_device_latency_ns: t,
            cxl_op_overhead_ns: 0,
            status: CompletionStatus::Ok,
        };
        let im = InterfaceModel::default();
        assert_eq!(finalize_latency(&c(712), &im).unwrap(), 752);
        assert_eq!(finalize_latency(&c(0), &im).unwrap(), 40);
        assert_eq!(finalize_latency(&c(640), &InterfaceModel { interface_overhead_ns: 0 }).unwrap(), 640);
        let bad = CxlCompletion { status: CompletionStatus::DeviceError, ..c(5) };
        assert!(finalize_latency(&bad, &im).is_err());
    }

    #[test]
    fn cycle_conversion_examples() {
        assert_eq!(ns_to_cycles(40, 2_000_000_000).unwrap(), 80);
        assert_eq!(ns_to_cycles(1, 2_500_000_000).unwrap(), 3);
        assert_eq!(ns_to_cycles(0, 3_000_000_000).unwrap(), 0);
        assert_eq!(ns_to_cycles(5, 0), Err(TransportError::ZeroFrequency));
        assert!(matches!(ns_to_cycles(u64::MAX, 4_000_000_000), Err(TransportError::CycleOverflow { .. })));
    }

    #[test]
    fn cycle_conversion_matches_bigint() {
        use num_bigint::BigUint;
        for (ns, hz) in
            [(99_720u64, 3_000_000_000u64), (123_456_789, 2_133_000_001), (1, 1), (u32::MAX as u64, 5_000_000_000)]
        {
            let prod = BigUint::from(ns) * BigUint::from(hz);
            let billion = BigUint::from(1_000_000_000u64);
            let q = (&prod + &billion - 1u32) / &billion;
            assert_eq!(BigUint::from(ns_to_cycles(ns, hz).unwrap()), q);
        }
        assert_eq!(ns_to_cycles(99_720, 3_000_000_000).unwrap(), 299_160);
    }

    #[test]
    fn issue_round_trip() {
        let mut t = Transport::new(0x4000_0000, 0xC000_0000, InterfaceModel::default());
        let cmd = t.encode(&req(Opcode::Write, 0x4000_0040)).unwrap();
        let c = t.issue(&cmd, &mut Fixed(640, 640)).unwrap();
        assert_eq!(c.request_tag, cmd.request_tag);
        assert_eq!(c.total_device_latency_ns, 640);
        assert_eq!(t.outstanding(), 0);
        let c0 = t.issue(&t.clone().encode(&req(Opcode::Read, 0x4000_0000)).unwrap(), &mut Fixed(0, 0)).unwrap();
        assert_eq!((c0.total_device_latency_ns, c0.cxl_op_overhead_ns), (0, 0));
    }

    #[test]
    fn issue_errors() {
        let mut t = Transport::new(0x4000_0000, 0xC000_0000, InterfaceModel::default());
        assert_eq!(t.encode(&req(Opcode::Read, 0x10)), Err(TransportError::NotCxl { address: 0x10 }));
        assert!(t.encode(&req(Opcode::Read, 0xC000_0000)).is_err());
        let cmd = t.encode(&req(Opcode::Read, 0x4000_0000)).unwrap();
        assert!(matches!(t.issue(&cmd, &mut Broken), Err(TransportError::Device { .. })));
        assert_eq!(t.outstanding(), 0);
        assert_eq!(t.issue(&cmd, &mut Fixed(1 << 33, 0)), Err(TransportError::LatencyOverflow(1 << 33)));
    }

    #[test]
    fn tags_advance() {
        let mut t = Transport::new(0, u64::MAX, InterfaceModel::default());
        let a = t.encode(&req(Opcode::Read, 0)).unwrap();
        let b = t.encode(&req(Opcode::Read, 0)).unwrap();
        assert_ne!(a.request_tag, b.request_tag);
    }

    #[test]
    fn decode_rejects_garbage() {
        let mut b = encode(&req(Opcode::Read, 0x1000), 7).to_bytes();
        b[0] = 0x09;
        assert!(CxlCommand::from_bytes(&b).is_err());
        let mut b = encode(&req(Opcode::Read, 0x1000), 7).to_bytes();
        b[13] = 1;
        assert!(CxlCommand::from_bytes(&b).is_err());
        assert!(CxlCommand::from_bytes(&[0; 3]).is_err());
        let mut c = [0u8; COMPLETION_BYTES];
        c[2] = 9;
        assert!(CxlCompletion::from_bytes(&c).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(addr in any::<u64>(), write in any::<bool>(), tag in any::<u16>()) {
            let op = if write { Opcode::Write } else { Opcode::Read };
            let cmd = encode(&req(op, addr), tag);
            let back = CxlCommand::from_bytes(&cmd.to_bytes()).unwrap();
            prop_assert_eq!(back.opcode, CxlOpcode::from(op));
            prop_assert_eq!(back.memory_address, addr & !63);
            prop_assert_eq!(back.request_tag, tag);
        }

        #[test]
        fn ceil_subadditivity(a in 0u64..1 << 40, b in 0u64..1 << 40, hz in 1u64..10_000_000_000) {
            let ca = ns_to_cycles(a, hz).unwrap();
            let cb = ns_to_cycles(b, hz).unwrap();
            let cab = ns_to_cycles(a + b, hz).unwrap();
            prop_assert!(cab <= ca + cb);
            prop_assert!(cab >= ca);
        }

        #[test]
        fn finalize_is_additive(t in any::<u32>(), o in 0u64..1 << 20) {
            let c = CxlCompletion { request_tag: 0, total_device_latency_ns: t, cxl_op_overhead_ns: 0, status: CompletionStatus::Ok };
            prop_assert_eq!(finalize_latency(&c, &InterfaceModel { interface_overhead_ns: o }).unwrap(), t as u64 + o);
        }
    }
}
