"""unitrans: a desk-scale unified speech/text translation framework.

One encoder-decoder model is trained under a stochastic mixture of six
objectives (ASR, E2E-ST, MMT, MT, SLM, TLM) and decoded in five modes,
including a two-stage speech translation mode in which the model's own
transcript hypothesis conditions the translation pass.
"""

__version__ = "0.1.0"
