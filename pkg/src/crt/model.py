"""The cross-domain reconstruction transformer.

Per-domain CNNs embed patches; [CLS] tokens, domain-type and position
embeddings are added; a shared transformer encodes the kept tokens; a light
decoder fills every dropped slot with a learnable decode token and
reconstructs the target domains patch by patch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .numerics import tensor as T
from .numerics.tensor import DiffArray
from .sequencing import ALL_DOMAINS, BatchPlan, Domain, PatchLayout

# (encoder domains, reconstruction target domains) per ablation mode
ABLATIONS: dict[str, tuple[tuple[Domain, ...], tuple[Domain, ...]]] = {
    "full": (ALL_DOMAINS, ALL_DOMAINS),
    "no_phase": ((Domain.TIME, Domain.MAGNITUDE), (Domain.TIME, Domain.MAGNITUDE)),
    "time_only": ((Domain.TIME,), (Domain.TIME,)),
    "freq_only": ((Domain.MAGNITUDE, Domain.PHASE), (Domain.MAGNITUDE, Domain.PHASE)),
    "t2f": ((Domain.TIME,), (Domain.MAGNITUDE, Domain.PHASE)),
    "f2t": ((Domain.MAGNITUDE, Domain.PHASE), (Domain.TIME,)),
}


@dataclass
class ModelConfig:
    D: int = 64
    encoder_layers: int = 4
    decoder_layers: int = 2
    heads: int = 4
    cnn_blocks: int = 2
    mlp_ratio: float = 2.0
    patch_len: int = 8
    channels: int = 1
    time_length: int = 128
    num_classes: int = 4
    ablation: str = "full"
    proj_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.D % self.heads:
            raise ValueError(f"D={self.D} not divisible by heads={self.heads}")
        if self.decoder_layers > self.encoder_layers:
            raise ValueError("decoder_layers must not exceed encoder_layers")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        self.layout  # validates divisibility

    @property
    def layout(self) -> PatchLayout:
        return PatchLayout(self.time_length, self.patch_len)

    @property
    def N_max(self) -> int:
        return self.layout.N

    @property
    def encoder_domains(self) -> tuple[Domain, ...]:
        return ABLATIONS[self.ablation][0]

    @property
    def target_domains(self) -> tuple[Domain, ...]:
        return ABLATIONS[self.ablation][1]

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": dict(D=64, encoder_layers=4, decoder_layers=2, heads=4, cnn_blocks=2),
    # ResNet-18 has eight basic residual blocks
    "large": dict(D=256, encoder_layers=6, decoder_layers=2, heads=8, cnn_blocks=8, mlp_ratio=4.0),
}


@dataclass
class TokenizedInput:
    tokens: DiffArray  # (B, n_cls + K, D)
    positions: np.ndarray  # (B, K) global patch index of each non-CLS token
    domains: np.ndarray  # (B, K)
    key_mask: np.ndarray  # (B, n_cls + K) False on padding
    n_cls: int
    patch_embeddings: DiffArray  # (B, K, D) CNN outputs of the kept patches, before any added embedding


@dataclass
class EncoderOutput:
    token_states: DiffArray  # (B, n_cls + K, D)
    representation: DiffArray  # (B, D), mean of the CLS slots
    tokens: TokenizedInput
    extras: dict = field(default_factory=dict)


class CRTModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        D = cfg.D
        layout = cfg.layout
        self.cnn = {d.name.lower(): nn.ResidualCNN(cfg.channels, D, cfg.cnn_blocks, rng)
                    for d in cfg.encoder_domains}
        self.cls = nn.param(rng.normal(0, 0.02, (len(cfg.encoder_domains), D)))
        self.domain_embed = nn.param(rng.normal(0, 0.02, (3, D)))
        self.pos_embed = nn.param(rng.normal(0, 0.02, (layout.N + 3, D)))
        self.encoder = [nn.TransformerBlock(D, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.encoder_layers)]
        self.encoder_norm = nn.LayerNorm(D)
        self.decoder_adapter = nn.Linear(D, D, rng)
        self.decode_token = nn.param(rng.normal(0, 0.02, D))
        self.decoder = [nn.TransformerBlock(D, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.decoder_layers)]
        self.decoder_norm = nn.LayerNorm(D)
        self.head = nn.Linear(D, cfg.channels * cfg.patch_len, rng)
        proj = cfg.proj_dim or D
        self.proj1 = nn.MLP(D, D, proj, rng, activation="relu")
        self.proj2 = nn.MLP(D, D, proj, rng, activation="relu")
        self.classifier = nn.MLP(D, D, cfg.num_classes, rng)

        self.enc_positions = np.concatenate([layout.indices(d) for d in cfg.encoder_domains])
        self.dec_positions = np.union1d(
            self.enc_positions, np.concatenate([layout.indices(d) for d in cfg.target_domains]))
        self.target_positions = np.concatenate([layout.indices(d) for d in cfg.target_domains])

    # -- parameter groups -------------------------------------------------

    def pretrain_parameters(self) -> list[DiffArray]:
        skip = {id(p) for p in self.classifier.parameters()}
        return [p for p in self.parameters() if id(p) not in skip]

    def encoder_parameters(self) -> list[DiffArray]:
        """Everything the representation depends on."""
        groups = [self.cls, self.domain_embed, self.pos_embed]
        for m in list(self.cnn.values()) + self.encoder + [self.encoder_norm]:
            groups += m.parameters()
        return groups

    # -- forward pieces ----------------------------------------------------

    def embed_patches(self, patches: np.ndarray, plan: BatchPlan) -> TokenizedInput:
        """patches: (B, N, d, P) full patch grid; only the plan's kept patches are embedded."""
        cfg = self.cfg
        B, N, d, P = patches.shape
        if P != cfg.patch_len or N != cfg.N_max or d != cfg.channels:
            raise ValueError(f"patch grid {patches.shape} does not match config "
                             f"(N={cfg.N_max}, d={cfg.channels}, P={cfg.patch_len})")
        layout = cfg.layout
        kept = plan.kept
        if not np.isin(kept[plan.kept_mask], self.enc_positions).all():
            raise ValueError("plan keeps patches outside the encoder domains")
        doms = layout.domains[kept]
        raw = patches[np.arange(B)[:, None], kept].transpose(0, 1, 3, 2)  # (B, K, P, d)
        flat_dom = doms.reshape(-1)
        flat_raw = raw.reshape(-1, P, d)
        outputs, order = [], []
        for dom in cfg.encoder_domains:
            rows = np.flatnonzero(flat_dom == int(dom))
            if len(rows):
                outputs.append(self.cnn[dom.name.lower()](flat_raw[rows]))
                order.append(rows)
        # padding slots may carry a domain outside the encoder set; they are masked anyway
        missing = np.setdiff1d(np.arange(flat_dom.size), np.concatenate(order) if order else [])
        if len(missing):
            outputs.append(np.zeros((len(missing), cfg.D)))
            order.append(missing)
        stacked = outputs[0] if len(outputs) == 1 else T.concat(outputs, axis=0)
        inverse = np.empty(flat_dom.size, dtype=np.int64)
        inverse[np.concatenate(order)] = np.arange(flat_dom.size)
        embeds = T.embedding(stacked, inverse.reshape(B, -1))  # (B, K, D)

        tokens = embeds + T.embedding(self.pos_embed, kept + 3) + T.embedding(self.domain_embed, doms)
        dom_ids = np.array([int(dm) for dm in cfg.encoder_domains])
        cls = self.cls + T.embedding(self.domain_embed, dom_ids) + T.embedding(self.pos_embed, dom_ids)
        cls = T.reshape(cls, (1, len(dom_ids), cfg.D)) + np.zeros((B, 1, 1))
        seq = T.concat([cls, tokens], axis=1)
        key_mask = np.concatenate([np.ones((B, len(dom_ids)), dtype=bool), plan.kept_mask], axis=1)
        return TokenizedInput(seq, kept, doms, key_mask, len(dom_ids), embeds)

    def encode(self, tokens: TokenizedInput) -> EncoderOutput:
        bias = nn.key_padding_bias(tokens.key_mask)
        h = tokens.tokens
        for block in self.encoder:
            h = block(h, bias)
        h = self.encoder_norm(h) if self.encoder else h
        representation = T.mean(h[:, :tokens.n_cls], axis=1)
        return EncoderOutput(h, representation, tokens)

    def decode_reconstruct(self, enc: EncoderOutput, plan: BatchPlan) -> DiffArray:
        """Reconstructed target-domain patches, (B, N_target, d, P)."""
        cfg = self.cfg
        tok = enc.tokens
        B = tok.tokens.shape[0]
        c = tok.n_cls
        K = plan.kept.shape[1]
        layout = cfg.layout
        h = self.decoder_adapter(enc.token_states)

        dec_pos = self.dec_positions
        slot_of = np.full(layout.N, -1, dtype=np.int64)
        slot_of[dec_pos] = np.arange(len(dec_pos))
        perm = np.tile(K + np.arange(len(dec_pos)), (B, 1))
        for b in range(B):
            ks = np.flatnonzero(plan.kept_mask[b])
            slots = slot_of[plan.kept[b, ks]]
            if (slots < 0).any():
                raise ValueError("kept patch outside decoder positions")
            if len(np.unique(slots)) != len(slots):
                raise ValueError("position collision in decoder scatter")
            perm[b, slots] = ks

        fill = self.decode_token + T.embedding(self.domain_embed, layout.domains[dec_pos])  # (Nd, D)
        fill = T.reshape(fill, (1,) + fill.shape) + np.zeros((B, 1, 1))
        merged = T.take_rows(T.concat([h[:, c:], fill], axis=1), perm)
        merged = merged + T.embedding(self.pos_embed, dec_pos + 3)
        x = T.concat([h[:, :c], merged], axis=1)
        for block in self.decoder:
            x = block(x)
        x = self.decoder_norm(x)
        target_slots = slot_of[self.target_positions]
        out = self.head(T.slice_(x, (slice(None), c + target_slots)))
        return T.reshape(out, (B, len(target_slots), cfg.channels, cfg.patch_len))

    def pooled_patch_embeddings(self, tokens: TokenizedInput) -> DiffArray:
        """Mean CNN embedding over the real (non-padding) kept patches."""
        mask = tokens.key_mask[:, tokens.n_cls:].astype(np.float64)
        weights = (mask / mask.sum(axis=1, keepdims=True))[:, :, None]
        return T.sum_(tokens.patch_embeddings * weights, axis=1)

    def project_idc(self, representation, pooled) -> tuple[DiffArray, DiffArray]:
        return self.proj1(representation), self.proj2(pooled)

    def classify(self, representation) -> DiffArray:
        return self.classifier(representation)

    def representation(self, patches: np.ndarray, plan: BatchPlan) -> DiffArray:
        return self.encode(self.embed_patches(patches, plan)).representation
