use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_REGS: usize = 16;

/// Every instruction occupies one 4-byte slot of the text segment.
pub const INSTR_BYTES: u64 = 4;

/// Width of LD/ST/OKLD accesses in bytes (little-endian).
pub const WORD_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    /// CALL writes the return address here and RET jumps through it.
    pub const LINK: Reg = Reg(15);

    pub fn new(index: u8) -> Option<Reg> {
        ((index as usize) < NUM_REGS).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Opcode {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Addi,
    Li,
    Ld,
    St,
    Okld,
    Okreset,
    Beq,
    Bne,
    Blt,
    Jmp,
    Jmpr,
    Call,
    Ret,
    Syscall,
    Sysret,
    Flush,
    Rdcycle,
    Fence,
    Nop,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 27] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Addi,
        Opcode::Li,
        Opcode::Ld,
        Opcode::St,
        Opcode::Okld,
        Opcode::Okreset,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Jmp,
        Opcode::Jmpr,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Syscall,
        Opcode::Sysret,
        Opcode::Flush,
        Opcode::Rdcycle,
        Opcode::Fence,
        Opcode::Nop,
        Opcode::Halt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Shl => "SHL",
            Opcode::Shr => "SHR",
            Opcode::Addi => "ADDI",
            Opcode::Li => "LI",
            Opcode::Ld => "LD",
            Opcode::St => "ST",
            Opcode::Okld => "OKLD",
            Opcode::Okreset => "OKRESET",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Blt => "BLT",
            Opcode::Jmp => "JMP",
            Opcode::Jmpr => "JMPR",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::Syscall => "SYSCALL",
            Opcode::Sysret => "SYSRET",
            Opcode::Flush => "FLUSH",
            Opcode::Rdcycle => "RDCYCLE",
            Opcode::Fence => "FENCE",
            Opcode::Nop => "NOP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let upper = s.to_ascii_uppercase();
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == upper)
    }
}

/// One decoded instruction.
///
/// Field use by opcode:
/// - ALU (`ADD`..`SHR`): `rd = rs1 op rs2`
/// - `ADDI`: `rd = rs1 + imm`; `LI`: `rd = imm`
/// - `LD`/`OKLD`: `rd = mem[rs1 + imm]`; `ST`: `mem[rs1 + imm] = rs2`; `FLUSH`: line of `rs1 + imm`
/// - `BEQ`/`BNE`/`BLT`: compare `rs1`, `rs2`, absolute target in `imm`
/// - `JMP`/`CALL`: absolute target in `imm`; `CALL` links into r15
/// - `JMPR`: target in `rs1`; `RET`: target in r15
/// - `RDCYCLE`: `rd = cycle counter`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: Reg,
    pub rs1: Reg,
    pub rs2: Reg,
    pub imm: i64,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Instruction {
            opcode,
            rd: Reg::ZERO,
            rs1: Reg::ZERO,
            rs2: Reg::ZERO,
            imm: 0,
        }
    }

    pub fn with_rd(mut self, rd: Reg) -> Self {
        self.rd = rd;
        self
    }

    pub fn with_rs1(mut self, rs1: Reg) -> Self {
        self.rs1 = rs1;
        self
    }

    pub fn with_rs2(mut self, rs2: Reg) -> Self {
        self.rs2 = rs2;
        self
    }

    pub fn with_imm(mut self, imm: i64) -> Self {
        self.imm = imm;
        self
    }

    pub fn is_load(&self) -> bool {
        matches!(self.opcode, Opcode::Ld | Opcode::Okld)
    }

    pub fn is_store(&self) -> bool {
        self.opcode == Opcode::St
    }

    /// Memory instructions whose address needs a data translation.
    pub fn is_mem(&self) -> bool {
        matches!(self.opcode, Opcode::Ld | Opcode::Okld | Opcode::St | Opcode::Flush)
    }

    pub fn is_cond_branch(&self) -> bool {
        matches!(self.opcode, Opcode::Beq | Opcode::Bne | Opcode::Blt)
    }

    /// Control transfers whose target or direction is predicted and can be wrong.
    pub fn is_predicted_control(&self) -> bool {
        self.is_cond_branch() || matches!(self.opcode, Opcode::Jmpr | Opcode::Ret)
    }

    /// Source registers read by the instruction, in operand order.
    pub fn sources(&self) -> [Option<Reg>; 2] {
        use Opcode::*;
        match self.opcode {
            Add | Sub | And | Or | Xor | Shl | Shr => [Some(self.rs1), Some(self.rs2)],
            Beq | Bne | Blt => [Some(self.rs1), Some(self.rs2)],
            St => [Some(self.rs1), Some(self.rs2)],
            Addi | Ld | Okld | Flush | Jmpr => [Some(self.rs1), None],
            Ret => [Some(Reg::LINK), None],
            Li | Okreset | Jmp | Call | Syscall | Sysret | Rdcycle | Fence | Nop | Halt => [None, None],
        }
    }

    /// Destination register, if any; writes to r0 are reported as `None`.
    pub fn dest(&self) -> Option<Reg> {
        use Opcode::*;
        let rd = match self.opcode {
            Add | Sub | And | Or | Xor | Shl | Shr | Addi | Li | Ld | Okld | Rdcycle => self.rd,
            Call => Reg::LINK,
            _ => return None,
        };
        (!rd.is_zero()).then_some(rd)
    }

    /// Result of a register-to-register computation. `a`/`b` are the source
    /// values in `sources()` order. Returns `None` for non-ALU opcodes.
    pub fn eval_alu(&self, a: u64, b: u64) -> Option<u64> {
        use Opcode::*;
        Some(match self.opcode {
            Add => a.wrapping_add(b),
            Sub => a.wrapping_sub(b),
            And => a & b,
            Or => a | b,
            Xor => a ^ b,
            Shl => a.wrapping_shl((b & 63) as u32),
            Shr => a.wrapping_shr((b & 63) as u32),
            Addi => a.wrapping_add(self.imm as u64),
            Li => self.imm as u64,
            _ => return None,
        })
    }

    /// Direction of a conditional branch given its two operands.
    pub fn branch_taken(&self, a: u64, b: u64) -> Option<bool> {
        match self.opcode {
            Opcode::Beq => Some(a == b),
            Opcode::Bne => Some(a != b),
            Opcode::Blt => Some((a as i64) < (b as i64)),
            _ => None,
        }
    }

    pub fn effective_address(&self, base: u64) -> u64 {
        base.wrapping_add(self.imm as u64)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Opcode::*;
        let m = self.opcode.mnemonic();
        match self.opcode {
            Add | Sub | And | Or | Xor | Shl | Shr => {
                write!(f, "{m} {}, {}, {}", self.rd, self.rs1, self.rs2)
            }
            Addi => write!(f, "{m} {}, {}, {}", self.rd, self.rs1, self.imm),
            Li => write!(f, "{m} {}, {:#x}", self.rd, self.imm),
            Ld | Okld => write!(f, "{m} {}, [{}{:+}]", self.rd, self.rs1, self.imm),
            St => write!(f, "{m} {}, [{}{:+}]", self.rs2, self.rs1, self.imm),
            Flush => write!(f, "{m} [{}{:+}]", self.rs1, self.imm),
            Beq | Bne | Blt => write!(f, "{m} {}, {}, {:#x}", self.rs1, self.rs2, self.imm),
            Jmp | Call => write!(f, "{m} {:#x}", self.imm),
            Jmpr => write!(f, "{m} {}", self.rs1),
            Rdcycle => write!(f, "{m} {}", self.rd),
            Ret | Syscall | Sysret | Okreset | Fence | Nop | Halt => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_bounds() {
        assert!(Reg::new(15).is_some());
        assert!(Reg::new(16).is_none());
    }

    #[test]
    fn r0_is_never_a_destination() {
        let i = Instruction::new(Opcode::Add).with_rd(Reg::ZERO);
        assert_eq!(i.dest(), None);
        let call = Instruction::new(Opcode::Call).with_imm(0x2000);
        assert_eq!(call.dest(), Some(Reg::LINK));
    }

    #[test]
    fn mnemonics_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
            assert_eq!(Opcode::from_mnemonic(&op.mnemonic().to_lowercase()), Some(op));
        }
        assert_eq!(Opcode::from_mnemonic("MOV"), None);
    }

    #[test]
    fn okreset_and_fence_take_no_operands() {
        for op in [Opcode::Okreset, Opcode::Fence] {
            let i = Instruction::new(op);
            assert_eq!(i.sources(), [None, None]);
            assert_eq!(i.dest(), None);
        }
    }

    #[test]
    fn blt_is_signed() {
        let i = Instruction::new(Opcode::Blt);
        assert_eq!(i.branch_taken(u64::MAX, 0), Some(true));
        assert_eq!(i.branch_taken(0, u64::MAX), Some(false));
    }

    #[test]
    fn shifts_mask_amount() {
        let shl = Instruction::new(Opcode::Shl);
        assert_eq!(shl.eval_alu(1, 64 + 3), Some(8));
    }
}
