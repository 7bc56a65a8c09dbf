//! Conditional custody: party wallets, per-job fee and collateral vaults, and
//! the receipts that evidence every movement.
//!
//! Amounts are integer cents. Every instruction is a double-entry transfer, so
//! [`Ledger::total_supply`] never changes after the accounts are opened.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agreement::{AgreementHash, JobId};
use crate::money::Money;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccountId {
    Wallet(String),
    FeeVault(JobId),
    CollateralVault(JobId),
}

impl AccountId {
    pub fn wallet(id: impl Into<String>) -> Self {
        AccountId::Wallet(id.into())
    }

    fn vault_job(&self) -> Option<&JobId> {
        match self {
            AccountId::Wallet(_) => None,
            AccountId::FeeVault(j) | AccountId::CollateralVault(j) => Some(j),
        }
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccountId::Wallet(id) => write!(f, "wallet:{id}"),
            AccountId::FeeVault(j) => write!(f, "fee-vault:{j}"),
            AccountId::CollateralVault(j) => write!(f, "collateral-vault:{j}"),
        }
    }
}

impl FromStr for AccountId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tag, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("bad account id {s:?}"))?;
        match tag {
            "wallet" => Ok(AccountId::Wallet(rest.to_string())),
            "fee-vault" => Ok(AccountId::FeeVault(JobId::new(rest))),
            "collateral-vault" => Ok(AccountId::CollateralVault(JobId::new(rest))),
            _ => Err(format!("bad account id {s:?}")),
        }
    }
}

impl Serialize for AccountId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccountId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    LockFee,
    ReleaseFee,
    RefundFee,
    LockCollateral,
    UnlockCollateral,
    SlashCollateral,
    TransferPrincipal,
    CollectPremium,
    RefundPremium,
    PayClaim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Wallet,
    FeeVault,
    CollateralVault,
}

impl InstructionKind {
    fn sides(self) -> (Side, Side) {
        use InstructionKind::*;
        match self {
            LockFee => (Side::Wallet, Side::FeeVault),
            ReleaseFee | RefundFee => (Side::FeeVault, Side::Wallet),
            LockCollateral => (Side::Wallet, Side::CollateralVault),
            UnlockCollateral | SlashCollateral => (Side::CollateralVault, Side::Wallet),
            TransferPrincipal | CollectPremium | RefundPremium | PayClaim => {
                (Side::Wallet, Side::Wallet)
            }
        }
    }
}

fn side(a: &AccountId) -> Side {
    match a {
        AccountId::Wallet(_) => Side::Wallet,
        AccountId::FeeVault(_) => Side::FeeVault,
        AccountId::CollateralVault(_) => Side::CollateralVault,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerInstruction {
    pub kind: InstructionKind,
    pub job_id: JobId,
    pub agreement_hash: AgreementHash,
    pub amount: Money,
    pub from: AccountId,
    pub to: AccountId,
    /// Receipt id this movement will be recorded under.
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Receipt {
    #[serde(rename = "ref")]
    pub reference: String,
    pub seq: u64,
    pub instruction: LedgerInstruction,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("insufficient funds in {account}: balance {balance}, needs {needed}")]
    InsufficientFunds {
        account: AccountId,
        balance: Money,
        needed: Money,
    },
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("instruction amount must be positive, got {0}")]
    InvalidAmount(Money),
    #[error("inconsistent instruction: {0}")]
    InconsistentInstruction(String),
    #[error("duplicate receipt ref {0:?}")]
    DuplicateRef(String),
    #[error("fee escrow for job {0} already settled")]
    EscrowAlreadySettled(JobId),
    #[error("account {0} already exists")]
    AccountExists(AccountId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub balance: Money,
    /// Only the underwriter treasury may run negative.
    pub overdraft: bool,
}

/// Result of applying a collateral-first claim settlement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSettlement {
    pub slash: Money,
    pub reimbursement: Money,
}

/// Collateral absorbs the loss first; the underwriter covers what remains,
/// up to the coverage limit.
pub fn settle_claim(loss: Money, collateral: Money, limit: Money) -> ClaimSettlement {
    let slash = collateral.min(loss).max(Money::ZERO);
    let reimbursement = (loss - slash).min(limit).max(Money::ZERO);
    ClaimSettlement {
        slash,
        reimbursement,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    accounts: BTreeMap<AccountId, Account>,
    receipts: Vec<Receipt>,
    refs: BTreeSet<String>,
    fee_settled: BTreeSet<JobId>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a party wallet with an initial endowment.
    pub fn open_wallet(
        &mut self,
        id: impl Into<String>,
        endowment: Money,
        overdraft: bool,
    ) -> Result<(), LedgerError> {
        let acc = AccountId::Wallet(id.into());
        if self.accounts.contains_key(&acc) {
            return Err(LedgerError::AccountExists(acc));
        }
        if endowment < Money::ZERO && !overdraft {
            return Err(LedgerError::InvalidAmount(endowment));
        }
        self.accounts.insert(
            acc,
            Account {
                balance: endowment,
                overdraft,
            },
        );
        Ok(())
    }

    pub fn balance(&self, account: &AccountId) -> Option<Money> {
        self.accounts.get(account).map(|a| a.balance)
    }

    pub fn wallet_balance(&self, id: &str) -> Money {
        self.balance(&AccountId::wallet(id)).unwrap_or(Money::ZERO)
    }

    pub fn accounts(&self) -> &BTreeMap<AccountId, Account> {
        &self.accounts
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn total_supply(&self) -> Money {
        self.accounts.values().map(|a| a.balance).sum()
    }

    pub fn is_fee_settled(&self, job: &JobId) -> bool {
        self.fee_settled.contains(job)
    }

    pub fn execute(&mut self, instr: LedgerInstruction) -> Result<Receipt, LedgerError> {
        let mut out = self.execute_batch(vec![instr])?;
        Ok(out.pop().expect("one receipt per instruction"))
    }

    /// Executes all instructions or none of them.
    pub fn execute_batch(
        &mut self,
        instrs: Vec<LedgerInstruction>,
    ) -> Result<Vec<Receipt>, LedgerError> {
        let mut scratch: BTreeMap<AccountId, Account> = BTreeMap::new();
        let mut new_refs = BTreeSet::new();
        let mut new_settled = BTreeSet::new();

        for ins in &instrs {
            self.check_shape(ins)?;
            if self.refs.contains(&ins.reference) || !new_refs.insert(ins.reference.clone()) {
                return Err(LedgerError::DuplicateRef(ins.reference.clone()));
            }
            if matches!(
                ins.kind,
                InstructionKind::ReleaseFee | InstructionKind::RefundFee
            ) {
                if self.fee_settled.contains(&ins.job_id) || !new_settled.insert(ins.job_id.clone())
                {
                    return Err(LedgerError::EscrowAlreadySettled(ins.job_id.clone()));
                }
            }
            let from = self.touch(&mut scratch, &ins.from, false)?;
            if !from.overdraft && from.balance < ins.amount {
                return Err(LedgerError::InsufficientFunds {
                    account: ins.from.clone(),
                    balance: from.balance,
                    needed: ins.amount,
                });
            }
            from.balance -= ins.amount;
            let creates = matches!(
                ins.kind,
                InstructionKind::LockFee | InstructionKind::LockCollateral
            );
            let to = self.touch(&mut scratch, &ins.to, creates)?;
            to.balance += ins.amount;
        }

        self.accounts.extend(scratch);
        self.refs.extend(new_refs);
        self.fee_settled.extend(new_settled);
        let mut out = Vec::with_capacity(instrs.len());
        for ins in instrs {
            let r = Receipt {
                reference: ins.reference.clone(),
                seq: self.receipts.len() as u64,
                instruction: ins,
            };
            self.receipts.push(r.clone());
            out.push(r);
        }
        Ok(out)
    }

    fn touch<'a>(
        &self,
        scratch: &'a mut BTreeMap<AccountId, Account>,
        id: &AccountId,
        create_vault: bool,
    ) -> Result<&'a mut Account, LedgerError> {
        if !scratch.contains_key(id) {
            let acc = match self.accounts.get(id) {
                Some(a) => a.clone(),
                None if create_vault && id.vault_job().is_some() => Account {
                    balance: Money::ZERO,
                    overdraft: false,
                },
                None => return Err(LedgerError::UnknownAccount(id.clone())),
            };
            scratch.insert(id.clone(), acc);
        }
        Ok(scratch.get_mut(id).expect("inserted above"))
    }

    fn check_shape(&self, ins: &LedgerInstruction) -> Result<(), LedgerError> {
        if !ins.amount.is_positive() {
            return Err(LedgerError::InvalidAmount(ins.amount));
        }
        if ins.reference.is_empty() {
            return Err(LedgerError::InconsistentInstruction("empty ref".into()));
        }
        let (f, t) = ins.kind.sides();
        if side(&ins.from) != f || side(&ins.to) != t {
            return Err(LedgerError::InconsistentInstruction(format!(
                "{:?} cannot move {} -> {}",
                ins.kind, ins.from, ins.to
            )));
        }
        for acc in [&ins.from, &ins.to] {
            if let Some(j) = acc.vault_job() {
                if j != &ins.job_id {
                    return Err(LedgerError::InconsistentInstruction(format!(
                        "{acc} does not belong to job {}",
                        ins.job_id
                    )));
                }
            }
        }
        if ins.from == ins.to {
            return Err(LedgerError::InconsistentInstruction("self transfer".into()));
        }
        Ok(())
    }

    /// Rebuilds balances from opening endowments and a receipt stream.
    pub fn from_receipts(
        endowments: &BTreeMap<AccountId, Account>,
        receipts: &[Receipt],
    ) -> Result<Ledger, LedgerError> {
        let mut l = Ledger {
            accounts: endowments.clone(),
            ..Ledger::default()
        };
        for r in receipts {
            if r.reference != r.instruction.reference {
                return Err(LedgerError::InconsistentInstruction(format!(
                    "receipt {} carries instruction ref {}",
                    r.reference, r.instruction.reference
                )));
            }
            l.execute(r.instruction.clone())?;
        }
        Ok(l)
    }

    /// Net amount that moved into `account` for `job`, across all receipts.
    pub fn net_flow(&self, job: &JobId, account: &AccountId) -> Money {
        self.receipts
            .iter()
            .filter(|r| &r.instruction.job_id == job)
            .map(|r| {
                let i = &r.instruction;
                if &i.to == account {
                    i.amount
                } else if &i.from == account {
                    -i.amount
                } else {
                    Money::ZERO
                }
            })
            .sum()
    }

    /// Receipts as newline-terminated JSON records.
    pub fn export_receipts(&self) -> String {
        let mut out = String::new();
        for r in &self.receipts {
            out.push_str(&serde_json::to_string(r).expect("receipts serialize"));
            out.push('\n');
        }
        out
    }
}
