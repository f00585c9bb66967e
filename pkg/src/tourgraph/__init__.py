"""Spatiotemporal knowledge graphs from tour videos, queried for navigation goals."""

from __future__ import annotations

from .association import AssociationStrategy, build_graph, stoa_update
from .backends import BackendProfile, make_backend, mock_backend
from .extraction import ExtractionConfig, FrameManifest, extract_all, partition_frames
from .graph import ChunkGraph, KnowledgeGraph, ObjectDescriptor, SpatialRelation, new_graph
from .query import Query, QueryResult, answer
from .store import RetrievalCriteria, load_graph, retrieve_subgraph, save_graph

__version__ = "0.1.0"

__all__ = [
    "AssociationStrategy",
    "BackendProfile",
    "ChunkGraph",
    "ExtractionConfig",
    "FrameManifest",
    "KnowledgeGraph",
    "ObjectDescriptor",
    "Query",
    "QueryResult",
    "RetrievalCriteria",
    "SpatialRelation",
    "answer",
    "build_graph",
    "extract_all",
    "load_graph",
    "make_backend",
    "mock_backend",
    "new_graph",
    "partition_frames",
    "retrieve_subgraph",
    "save_graph",
    "stoa_update",
]
