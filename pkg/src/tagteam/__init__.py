"""tagteam: a team of single-task BiLSTM-CRF sequence taggers.

Each tagger owns one entity type. Taggers are first trained solo, then
take turns as the training target while the others feed it their frozen
encoder states through a trainable weighted-max-pooling channel.
"""

__version__ = "0.1.0"
