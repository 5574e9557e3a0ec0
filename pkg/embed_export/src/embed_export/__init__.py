"""Entity-title embedding export.

Reads `entity2id.txt` (lines `name<TAB>id`, dense ids from 0), encodes
each title with a pretrained text encoder (mean pooling over token
vectors) or the offline hashing encoder, and writes the embedding file
format consumed downstream: a header `N d` followed by one
`entity_id v1 ... vd` line per entity in id order.
"""

from .core import (EncoderUnavailable, ExportIntegrityError, encode_titles,
                   export_embeddings, hashing_vectors, read_titles, write_embedding_file)

__all__ = ["EncoderUnavailable", "ExportIntegrityError", "encode_titles",
           "export_embeddings", "hashing_vectors", "read_titles", "write_embedding_file"]
__version__ = "0.1.0"
