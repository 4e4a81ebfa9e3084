//! Two-pass assembler for the toy ISA.
//!
//! Grammar, one item per line (`#` starts a comment):
//!
//! ```text
//! label:                      # binds to the current text address
//! .page <vaddr>               # continue emitting code at vaddr
//! .data <vaddr> <byte>...     # initialise bytes (maps the page even if empty)
//! .word <vaddr> <value>...    # initialise 8-byte little-endian words; labels allowed
//! .secret <vaddr>, <len>      # mark a whole-page region as high
//! .sandbox <id>               # following instructions belong to sandbox <id>
//! .entry <label|vaddr>        # override the entry point
//! ADD r3, r1, r2
//! LD r4, [r1+8]
//! ST r2, [r4-16]
//! ```
//!
//! Immediates are decimal or `0x` hex, or `label`, `label+N`, `label-N`.
//! Without `.entry`, execution starts at `_start` if defined, else at the
//! first instruction in source order.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::instr::{Instruction, Opcode, Reg, INSTR_BYTES};
use super::program::{Program, DEFAULT_TEXT_BASE, SYSCALL_HANDLER_LABEL};

pub const DEFAULT_PAGE_SIZE: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    /// 1-based source line; 0 for whole-program checks.
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("label `{0}` redefined")]
    LabelRedefined(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("secret region not page-aligned: {start:#x}+{len:#x}")]
    SecretNotPageAligned { start: u64, len: u64 },
    #[error("instruction at {0:#x} straddles a page boundary")]
    StraddlesPage(u64),
    #[error("address {0:#x} already holds an instruction")]
    DuplicateAddress(u64),
    #[error("page {0:#x} is used for both code and data")]
    PageConflict(u64),
    #[error("bad operand `{0}`")]
    BadOperand(String),
    #[error("expected {expected} operand(s), found {found}")]
    OperandCount { expected: usize, found: usize },
    #[error("invalid page size {0}")]
    BadPageSize(u64),
    #[error("program contains no instructions")]
    Empty,
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

pub fn assemble(source: &str) -> Result<Program, AsmError> {
    assemble_with_page_size(source, DEFAULT_PAGE_SIZE)
}

pub fn assemble_with_page_size(source: &str, page_size: u64) -> Result<Program, AsmError> {
    if !page_size.is_power_of_two() || page_size < INSTR_BYTES {
        return Err(err(0, AsmErrorKind::BadPageSize(page_size)));
    }
    let mut asm = Assembler::new(page_size);
    for (i, raw) in source.lines().enumerate() {
        asm.line(i + 1, raw)?;
    }
    asm.finish()
}

struct PendingInstr {
    line: usize,
    addr: u64,
    opcode: Opcode,
    operands: Vec<String>,
}

struct PendingWords {
    line: usize,
    addr: u64,
    values: Vec<String>,
}

struct Assembler {
    page_size: u64,
    cursor: Option<u64>,
    labels: BTreeMap<String, u64>,
    instrs: Vec<PendingInstr>,
    occupied: BTreeSet<u64>,
    words: Vec<PendingWords>,
    data: BTreeMap<u64, u8>,
    data_pages: BTreeSet<u64>,
    text_pages: BTreeSet<u64>,
    secret_regions: Vec<(u64, u64, usize)>,
    sandbox: Option<u32>,
    sandbox_marks: Vec<(u64, u32)>,
    pending_mark: Option<u32>,
    sandbox_of: BTreeMap<u64, u32>,
    entry: Option<(usize, String)>,
}

impl Assembler {
    fn new(page_size: u64) -> Self {
        Assembler {
            page_size,
            cursor: None,
            labels: BTreeMap::new(),
            instrs: Vec::new(),
            occupied: BTreeSet::new(),
            words: Vec::new(),
            data: BTreeMap::new(),
            data_pages: BTreeSet::new(),
            text_pages: BTreeSet::new(),
            secret_regions: Vec::new(),
            sandbox: None,
            sandbox_marks: Vec::new(),
            pending_mark: None,
            sandbox_of: BTreeMap::new(),
            entry: None,
        }
    }

    fn base(&self, addr: u64) -> u64 {
        addr - addr % self.page_size
    }

    fn cursor(&self) -> u64 {
        self.cursor.unwrap_or(DEFAULT_TEXT_BASE)
    }

    fn line(&mut self, line_no: usize, raw: &str) -> Result<(), AsmError> {
        let mut text = raw.split('#').next().unwrap_or("").trim();
        // Peel off any leading `label:` definitions.
        while let Some(colon) = text.find(':') {
            let name = text[..colon].trim();
            if !is_identifier(name) {
                break;
            }
            let addr = self.cursor();
            if self.labels.insert(name.to_string(), addr).is_some() {
                return Err(err(line_no, AsmErrorKind::LabelRedefined(name.to_string())));
            }
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            return Ok(());
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        if let Some(directive) = head.strip_prefix('.') {
            self.directive(line_no, directive, rest)
        } else {
            self.instruction(line_no, head, rest)
        }
    }

    fn directive(&mut self, line_no: usize, name: &str, rest: &str) -> Result<(), AsmError> {
        let args: Vec<&str> = rest
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let num = |s: &str| parse_number(s).ok_or_else(|| err(line_no, AsmErrorKind::BadOperand(s.into())));
        let want = |n: usize| {
            if args.len() < n {
                Err(err(
                    line_no,
                    AsmErrorKind::OperandCount {
                        expected: n,
                        found: args.len(),
                    },
                ))
            } else {
                Ok(())
            }
        };
        match name.to_ascii_lowercase().as_str() {
            "page" => {
                want(1)?;
                self.cursor = Some(num(args[0])? as u64);
            }
            "data" => {
                want(1)?;
                let addr = num(args[0])? as u64;
                self.data_pages.insert(self.base(addr));
                for (i, b) in args[1..].iter().enumerate() {
                    let v = num(b)?;
                    if !(0..=255).contains(&v) {
                        return Err(err(line_no, AsmErrorKind::BadOperand((*b).into())));
                    }
                    let a = addr + i as u64;
                    self.data_pages.insert(self.base(a));
                    self.data.insert(a, v as u8);
                }
            }
            "word" => {
                want(1)?;
                let addr = num(args[0])? as u64;
                let n = args.len().saturating_sub(1) as u64;
                self.data_pages.insert(self.base(addr));
                if n > 0 {
                    self.data_pages.insert(self.base(addr + n * 8 - 1));
                }
                self.words.push(PendingWords {
                    line: line_no,
                    addr,
                    values: args[1..].iter().map(|s| s.to_string()).collect(),
                });
            }
            "secret" => {
                want(2)?;
                let start = num(args[0])? as u64;
                let len = num(args[1])? as u64;
                self.secret_regions.push((start, len, line_no));
            }
            "sandbox" => {
                want(1)?;
                let id = num(args[0])?;
                let id = u32::try_from(id).map_err(|_| err(line_no, AsmErrorKind::BadOperand(args[0].into())))?;
                self.sandbox = Some(id);
                self.pending_mark = Some(id);
            }
            "entry" => {
                want(1)?;
                self.entry = Some((line_no, args[0].to_string()));
            }
            other => return Err(err(line_no, AsmErrorKind::UnknownDirective(other.into()))),
        }
        Ok(())
    }

    fn instruction(&mut self, line_no: usize, mnemonic: &str, rest: &str) -> Result<(), AsmError> {
        let opcode = Opcode::from_mnemonic(mnemonic)
            .ok_or_else(|| err(line_no, AsmErrorKind::UnknownMnemonic(mnemonic.into())))?;
        let addr = self.cursor();
        if addr % self.page_size + INSTR_BYTES > self.page_size {
            return Err(err(line_no, AsmErrorKind::StraddlesPage(addr)));
        }
        if !self.occupied.insert(addr) {
            return Err(err(line_no, AsmErrorKind::DuplicateAddress(addr)));
        }
        self.text_pages.insert(self.base(addr));
        if let Some(id) = self.pending_mark.take() {
            self.sandbox_marks.push((addr, id));
        }
        if let Some(id) = self.sandbox {
            self.sandbox_of.insert(addr, id);
        }
        let operands = split_operands(rest);
        self.instrs.push(PendingInstr {
            line: line_no,
            addr,
            opcode,
            operands,
        });
        self.cursor = Some(addr + INSTR_BYTES);
        Ok(())
    }

    fn resolve(&self, line: usize, expr: &str) -> Result<i64, AsmError> {
        let bad = || err(line, AsmErrorKind::BadOperand(expr.into()));
        let expr = expr.trim();
        // `term`, `term+N` or `term-N`, where term is a number or a label.
        let (term, offset) = match expr.get(1..).and_then(|s| s.find(['+', '-'])) {
            Some(i) => {
                let off = parse_number(&expr[i + 1..].replacen('+', "", 1)).ok_or_else(bad)?;
                (expr[..i + 1].trim(), off as i64)
            }
            None => (expr, 0),
        };
        let base = if let Some(v) = parse_number(term) {
            v as i64
        } else if is_identifier(term) {
            *self
                .labels
                .get(term)
                .ok_or_else(|| err(line, AsmErrorKind::UndefinedLabel(term.into())))? as i64
        } else {
            return Err(bad());
        };
        Ok(base.wrapping_add(offset))
    }

    fn encode(&self, p: &PendingInstr) -> Result<Instruction, AsmError> {
        use Opcode::*;
        let line = p.line;
        let ops = &p.operands;
        let count = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                Err(err(
                    line,
                    AsmErrorKind::OperandCount {
                        expected: n,
                        found: ops.len(),
                    },
                ))
            }
        };
        let reg = |s: &str| parse_reg(s).ok_or_else(|| err(line, AsmErrorKind::BadOperand(s.into())));
        let mem = |s: &str| -> Result<(Reg, i64), AsmError> {
            let inner = s
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| err(line, AsmErrorKind::BadOperand(s.into())))?;
            let inner: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
            match inner.find(['+', '-']) {
                Some(i) => {
                    let base = reg(&inner[..i])?;
                    let off = self.resolve(line, &inner[i..].replacen('+', "", 1))?;
                    Ok((base, off))
                }
                None => Ok((reg(&inner)?, 0)),
            }
        };
        let i = Instruction::new(p.opcode);
        Ok(match p.opcode {
            Add | Sub | And | Or | Xor | Shl | Shr => {
                count(3)?;
                i.with_rd(reg(&ops[0])?).with_rs1(reg(&ops[1])?).with_rs2(reg(&ops[2])?)
            }
            Addi => {
                count(3)?;
                i.with_rd(reg(&ops[0])?)
                    .with_rs1(reg(&ops[1])?)
                    .with_imm(self.resolve(line, &ops[2])?)
            }
            Li => {
                count(2)?;
                i.with_rd(reg(&ops[0])?).with_imm(self.resolve(line, &ops[1])?)
            }
            Ld | Okld => {
                count(2)?;
                let (base, off) = mem(&ops[1])?;
                i.with_rd(reg(&ops[0])?).with_rs1(base).with_imm(off)
            }
            St => {
                count(2)?;
                let (base, off) = mem(&ops[1])?;
                i.with_rs2(reg(&ops[0])?).with_rs1(base).with_imm(off)
            }
            Flush => {
                count(1)?;
                let (base, off) = mem(&ops[0])?;
                i.with_rs1(base).with_imm(off)
            }
            Beq | Bne | Blt => {
                count(3)?;
                i.with_rs1(reg(&ops[0])?)
                    .with_rs2(reg(&ops[1])?)
                    .with_imm(self.resolve(line, &ops[2])?)
            }
            Jmp | Call => {
                count(1)?;
                i.with_imm(self.resolve(line, &ops[0])?)
            }
            Jmpr => {
                count(1)?;
                i.with_rs1(reg(&ops[0])?)
            }
            Ret => {
                count(0)?;
                i.with_rs1(Reg::LINK)
            }
            Rdcycle => {
                count(1)?;
                i.with_rd(reg(&ops[0])?)
            }
            Okreset | Syscall | Sysret | Fence | Nop | Halt => {
                count(0)?;
                i
            }
        })
    }

    fn finish(self) -> Result<Program, AsmError> {
        if self.instrs.is_empty() {
            return Err(err(0, AsmErrorKind::Empty));
        }
        let mut text = BTreeMap::new();
        for p in &self.instrs {
            text.insert(p.addr, self.encode(p)?);
        }

        let mut data = self.data.clone();
        for w in &self.words {
            for (i, v) in w.values.iter().enumerate() {
                let value = self.resolve(w.line, v)? as u64;
                for (j, b) in value.to_le_bytes().iter().enumerate() {
                    data.insert(w.addr + 8 * i as u64 + j as u64, *b);
                }
            }
        }

        let mut data_pages = self.data_pages.clone();
        let mut secret_regions = Vec::new();
        for &(start, len, line) in &self.secret_regions {
            if len == 0 || start % self.page_size != 0 || len % self.page_size != 0 {
                return Err(err(line, AsmErrorKind::SecretNotPageAligned { start, len }));
            }
            let mut base = start;
            while base < start + len {
                data_pages.insert(base);
                base += self.page_size;
            }
            secret_regions.push((start, len));
        }

        if let Some(&page) = self.text_pages.intersection(&data_pages).next() {
            return Err(err(0, AsmErrorKind::PageConflict(page)));
        }

        let entry_pc = match &self.entry {
            Some((line, sym)) => self.resolve(*line, sym)? as u64,
            None => self.labels.get("_start").copied().unwrap_or(self.instrs[0].addr),
        };

        Ok(Program {
            page_size: self.page_size,
            text,
            text_pages: self.text_pages,
            data_pages,
            data,
            entry_pc,
            syscall_handler: self.labels.get(SYSCALL_HANDLER_LABEL).copied(),
            labels: self.labels,
            sandbox_marks: self.sandbox_marks,
            sandbox_of: self.sandbox_of,
            secret_regions,
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && parse_reg(s).is_none()
}

fn split_operands(rest: &str) -> Vec<String> {
    // Commas separate operands, but never inside a bracketed memory operand.
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in rest.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_reg(s: &str) -> Option<Reg> {
    let digits = s.strip_prefix('r').or_else(|| s.strip_prefix('R'))?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Reg::new(digits.parse().ok()?)
}

/// Decimal or `0x` hex, optional sign, `_` separators allowed.
pub(crate) fn parse_number(s: &str) -> Option<i128> {
    let s: String = s.trim().chars().filter(|&c| c != '_').collect();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.as_str()),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(hex, 16).ok()?
    } else {
        if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        body.parse::<i128>().ok()?
    };
    let v = if neg { -v } else { v };
    (v >= i64::MIN as i128 && v <= u64::MAX as i128).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = assemble("LI r1, 42\nHALT\n").unwrap();
        assert_eq!(p.text.len(), 2);
        assert_eq!(p.entry_pc, DEFAULT_TEXT_BASE);
        assert_eq!(p.text_pages.iter().next(), Some(&DEFAULT_TEXT_BASE));
        assert_eq!(p.text[&0x1000].imm, 42);
    }

    #[test]
    fn exact_page_secret() {
        let p = assemble(".secret 0x8000, 4096\nHALT").unwrap();
        assert_eq!(p.secret_regions, vec![(0x8000, 4096)]);
        assert!(p.data_pages.contains(&0x8000));
    }

    #[test]
    fn partial_page_secret_rejected() {
        let e = assemble(".secret 0x8000, 100\nHALT").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.to_string().contains("secret region not page-aligned"));
    }

    #[test]
    fn unknown_mnemonic() {
        let e = assemble("MOV r1, r2").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::UnknownMnemonic("MOV".into()));
    }

    #[test]
    fn label_redefinition() {
        let e = assemble("a: NOP\na: HALT").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::LabelRedefined("a".into()));
        assert_eq!(e.line, 2);
    }

    #[test]
    fn straddling_instruction() {
        let e = assemble(".page 0x1FFE\nNOP").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::StraddlesPage(0x1FFE));
    }

    #[test]
    fn code_flows_across_pages() {
        let p = assemble(".page 0x1FFC\nNOP\nHALT").unwrap();
        assert!(p.text.contains_key(&0x2000));
        assert_eq!(p.text_pages.len(), 2);
    }

    #[test]
    fn labels_and_memory_operands() {
        let src = "
            _start: LI r1, 0x9000
                    LD r2, [r1 + 8]
                    ST r2, [r1-0x10]
                    BEQ r2, r0, done
                    JMP _start
            done:   HALT
            .word 0x9000 7 done 0x9000+8
            .data 0x9100 1 2 0xff
        ";
        let p = assemble(src).unwrap();
        let ld = p.text[&0x1004];
        assert_eq!((ld.opcode, ld.rs1, ld.imm), (Opcode::Ld, Reg::new(1).unwrap(), 8));
        let st = p.text[&0x1008];
        assert_eq!(st.imm, -16);
        assert_eq!(st.rs2, Reg::new(2).unwrap());
        assert_eq!(p.text[&0x100c].imm, 0x1014);
        assert_eq!(p.data[&0x9008], 0x14);
        assert_eq!(p.data[&0x9010], 0x08);
        assert_eq!(p.data[&0x9102], 0xff);
    }

    #[test]
    fn sandbox_annotations() {
        let p = assemble("NOP\n.sandbox 2\nNOP\nNOP\n.sandbox 3\nHALT").unwrap();
        assert_eq!(p.sandbox_marks, vec![(0x1004, 2), (0x100c, 3)]);
        assert_eq!(p.sandbox_at(0x1000), None);
        assert_eq!(p.sandbox_at(0x1008), Some(2));
        assert_eq!(p.sandbox_at(0x100c), Some(3));
    }

    #[test]
    fn code_and_data_on_one_page_rejected() {
        let e = assemble("NOP\n.data 0x1800 1").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::PageConflict(0x1000));
    }

    #[test]
    fn register_names_are_not_labels() {
        assert!(assemble("JMP r3").is_err());
    }

    #[test]
    fn okreset_rejects_operands() {
        assert!(assemble("OKRESET r1").is_err());
        assert!(assemble("FENCE\nOKRESET\nHALT").is_ok());
    }
}
