//! Toy ISA: instructions, assembler, architectural state and the sequential
//! reference interpreter.

pub mod asm;
pub mod instr;
pub mod interp;
pub mod program;
pub mod state;

pub use asm::{assemble, assemble_with_page_size, AsmError, AsmErrorKind};
pub use instr::{Instruction, Opcode, Reg, INSTR_BYTES, NUM_REGS, WORD_BYTES};
pub use interp::{
    run_sequential, run_sequential_with, step_sequential, AccessKind, CycleSource, MemAccess, SequentialRun,
};
pub use program::Program;
pub use state::{ArchState, Fault, Memory};
