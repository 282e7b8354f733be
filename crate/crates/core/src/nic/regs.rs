//! Memory-mapped schedule registers.
//!
//! Writes land in a shadow copy. Writing 1 to `COMMIT` validates the shadow
//! copy and, if it is consistent, makes it the committed table; otherwise
//! the committed table is left alone and the error bit is raised.
//!
//! | offset          | register                                   |
//! |-----------------|--------------------------------------------|
//! | `0x000`         | `WINDOW_US`                                |
//! | `0x004`         | `NUM_ENTRIES` (at most 16)                 |
//! | `0x008`         | `GUARDBAND_NS`                             |
//! | `0x00C`         | `COMMIT` (W) / status (R)                  |
//! | `0x010 + 8*j`   | `SCR[j]`: bits 15:0 queue, bit 31 enable   |
//! | `0x014 + 8*j`   | `TQCR[j]`: slot length in microseconds     |
//!
//! Reads at these offsets return committed values. The shadow copy is
//! readable at the same offsets plus [`SHADOW_BASE`].

use thiserror::Error;

use super::schedule::{ScheduleEntry, ScheduleError, ScheduleTable, MAX_ENTRIES};

pub const WINDOW_US: u32 = 0x000;
pub const NUM_ENTRIES: u32 = 0x004;
pub const GUARDBAND_NS: u32 = 0x008;
pub const COMMIT: u32 = 0x00C;
pub const SCR_BASE: u32 = 0x010;
pub const TQCR_BASE: u32 = 0x014;
pub const ENTRY_STRIDE: u32 = 8;
pub const SHADOW_BASE: u32 = 0x100;

pub const SCR_ENABLE: u32 = 1 << 31;
/// Status bit 0: the last commit was accepted.
pub const STATUS_COMMIT_OK: u32 = 1 << 0;
/// Status bit 1: the last commit was rejected.
pub const STATUS_ERROR: u32 = 1 << 1;

pub const fn scr(j: u32) -> u32 {
    SCR_BASE + ENTRY_STRIDE * j
}

pub const fn tqcr(j: u32) -> u32 {
    TQCR_BASE + ENTRY_STRIDE * j
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegisterError {
    #[error("no register at offset {0:#05x}")]
    UnknownOffset(u32),
    #[error("register at {0:#05x} is read-only")]
    ReadOnly(u32),
    #[error("value {value} rejected for register {offset:#05x}")]
    InvalidValue { offset: u32, value: u32 },
    #[error("commit rejected: {0}")]
    CommitRejected(#[from] ScheduleError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct RawRegs {
    window_us: u32,
    num_entries: u32,
    guardband_ns: u32,
    scr: [u32; MAX_ENTRIES],
    tqcr: [u32; MAX_ENTRIES],
}

impl RawRegs {
    fn from_table(t: &ScheduleTable) -> Self {
        let mut r = RawRegs {
            window_us: t.window_us,
            num_entries: t.entries.len() as u32,
            guardband_ns: t.guardband_ns,
            ..Default::default()
        };
        for (j, e) in t.entries.iter().enumerate() {
            r.scr[j] = SCR_ENABLE | e.queue_idx as u32;
            r.tqcr[j] = e.slot_us;
        }
        r
    }

    fn to_table(&self) -> ScheduleTable {
        let entries = (0..self.num_entries as usize)
            .filter(|&j| self.scr[j] & SCR_ENABLE != 0)
            .map(|j| ScheduleEntry {
                queue_idx: (self.scr[j] & 0xffff) as u16,
                slot_us: self.tqcr[j],
            })
            .collect();
        ScheduleTable {
            window_us: self.window_us,
            entries,
            guardband_ns: self.guardband_ns,
        }
    }

    fn read(&self, offset: u32) -> Option<u32> {
        match offset {
            WINDOW_US => Some(self.window_us),
            NUM_ENTRIES => Some(self.num_entries),
            GUARDBAND_NS => Some(self.guardband_ns),
            _ => entry_slot(offset)
                .map(|(j, is_tqcr)| if is_tqcr { self.tqcr[j] } else { self.scr[j] }),
        }
    }
}

fn entry_slot(offset: u32) -> Option<(usize, bool)> {
    if offset < SCR_BASE || !offset.is_multiple_of(4) {
        return None;
    }
    let j = ((offset - SCR_BASE) / ENTRY_STRIDE) as usize;
    if j >= MAX_ENTRIES {
        return None;
    }
    Some((j, (offset - SCR_BASE) % ENTRY_STRIDE == 4))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterFile {
    num_queues: usize,
    shadow: RawRegs,
    committed: RawRegs,
    committed_table: ScheduleTable,
    status: u32,
    commits: u64,
}

impl RegisterFile {
    /// Start with a committed round-robin table.
    pub fn new(num_queues: usize, default_guardband_ns: u32) -> Self {
        let table = ScheduleTable::round_robin(default_guardband_ns);
        let raw = RawRegs::from_table(&table);
        RegisterFile {
            num_queues,
            shadow: raw.clone(),
            committed: raw,
            committed_table: table,
            status: STATUS_COMMIT_OK,
            commits: 0,
        }
    }

    pub fn committed_table(&self) -> &ScheduleTable {
        &self.committed_table
    }

    /// Number of successful commits so far.
    pub fn commit_count(&self) -> u64 {
        self.commits
    }

    pub fn read_register(&self, offset: u32) -> Result<u32, RegisterError> {
        if offset == COMMIT {
            return Ok(self.status);
        }
        if offset >= SHADOW_BASE && offset != SHADOW_BASE + COMMIT {
            if let Some(v) = self.shadow.read(offset - SHADOW_BASE) {
                return Ok(v);
            }
        }
        self.committed
            .read(offset)
            .ok_or(RegisterError::UnknownOffset(offset))
    }

    /// Write one register. Returns `Ok(true)` when the write was a
    /// successful commit.
    pub fn write_register(&mut self, offset: u32, value: u32) -> Result<bool, RegisterError> {
        match offset {
            WINDOW_US => self.shadow.window_us = value,
            NUM_ENTRIES => {
                if value as usize > MAX_ENTRIES {
                    return Err(RegisterError::InvalidValue { offset, value });
                }
                self.shadow.num_entries = value;
            }
            GUARDBAND_NS => self.shadow.guardband_ns = value,
            COMMIT => {
                if value != 1 {
                    return Err(RegisterError::InvalidValue { offset, value });
                }
                return self.commit().map(|_| true);
            }
            _ if offset >= SHADOW_BASE && self.shadow.read(offset - SHADOW_BASE).is_some() => {
                return Err(RegisterError::ReadOnly(offset));
            }
            _ => match entry_slot(offset) {
                Some((j, true)) => self.shadow.tqcr[j] = value,
                Some((j, false)) => self.shadow.scr[j] = value,
                None => return Err(RegisterError::UnknownOffset(offset)),
            },
        }
        Ok(false)
    }

    fn commit(&mut self) -> Result<(), RegisterError> {
        let table = self.shadow.to_table();
        match table.validate(self.num_queues) {
            Ok(()) => {
                self.committed = self.shadow.clone();
                self.committed_table = table;
                self.status = STATUS_COMMIT_OK;
                self.commits += 1;
                Ok(())
            }
            Err(e) => {
                self.status = STATUS_ERROR;
                Err(e.into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regs() -> RegisterFile {
        RegisterFile::new(8, 1218)
    }

    #[test]
    fn commit_programs_table() {
        let mut r = regs();
        r.write_register(tqcr(0), 90).unwrap();
        r.write_register(scr(0), SCR_ENABLE).unwrap();
        r.write_register(NUM_ENTRIES, 1).unwrap();
        r.write_register(WINDOW_US, 100).unwrap();
        assert_eq!(r.write_register(COMMIT, 1), Ok(true));
        let t = r.committed_table();
        assert_eq!(t.window_us, 100);
        assert_eq!(
            t.entries,
            vec![ScheduleEntry {
                queue_idx: 0,
                slot_us: 90
            }]
        );
        assert_eq!(
            r.read_register(COMMIT).unwrap() & STATUS_COMMIT_OK,
            STATUS_COMMIT_OK
        );
    }

    #[test]
    fn overcommitted_table_is_rejected() {
        let mut r = regs();
        let before = r.committed_table().clone();
        r.write_register(WINDOW_US, 100).unwrap();
        r.write_register(NUM_ENTRIES, 2).unwrap();
        for j in 0..2 {
            r.write_register(scr(j), SCR_ENABLE | j).unwrap();
            r.write_register(tqcr(j), 60).unwrap();
        }
        assert!(matches!(
            r.write_register(COMMIT, 1),
            Err(RegisterError::CommitRejected(_))
        ));
        let status = r.read_register(COMMIT).unwrap();
        assert_eq!(status & STATUS_ERROR, STATUS_ERROR);
        assert_eq!(status & STATUS_COMMIT_OK, 0);
        assert_eq!(r.committed_table(), &before);
    }

    #[test]
    fn shadow_is_separate_until_commit() {
        let mut r = regs();
        r.write_register(WINDOW_US, 250).unwrap();
        assert_eq!(r.read_register(WINDOW_US), Ok(100));
        assert_eq!(r.read_register(SHADOW_BASE + WINDOW_US), Ok(250));
        r.write_register(tqcr(3), 7).unwrap();
        assert_eq!(r.read_register(tqcr(3)), Ok(0));
        assert_eq!(r.read_register(SHADOW_BASE + tqcr(3)), Ok(7));
    }

    #[test]
    fn bad_offsets_and_values() {
        let mut r = regs();
        assert_eq!(
            r.write_register(0x0ff0, 1),
            Err(RegisterError::UnknownOffset(0x0ff0))
        );
        assert_eq!(
            r.read_register(0x002),
            Err(RegisterError::UnknownOffset(0x002))
        );
        assert_eq!(
            r.write_register(SHADOW_BASE, 1),
            Err(RegisterError::ReadOnly(SHADOW_BASE))
        );
        let before = r.clone();
        assert_eq!(
            r.write_register(NUM_ENTRIES, 17),
            Err(RegisterError::InvalidValue {
                offset: NUM_ENTRIES,
                value: 17
            })
        );
        assert_eq!(r, before);
        // one past the last TQCR
        assert!(r.write_register(tqcr(15) + 4, 1).is_err());
    }

    #[test]
    fn disabled_entries_are_skipped() {
        let mut r = regs();
        r.write_register(NUM_ENTRIES, 2).unwrap();
        r.write_register(scr(0), 1).unwrap();
        r.write_register(tqcr(0), 10).unwrap();
        r.write_register(scr(1), SCR_ENABLE | 2).unwrap();
        r.write_register(tqcr(1), 20).unwrap();
        r.write_register(COMMIT, 1).unwrap();
        assert_eq!(
            r.committed_table().entries,
            vec![ScheduleEntry {
                queue_idx: 2,
                slot_us: 20
            }]
        );
    }
}
