# CLI modules for the Whisper Prompt Toolkit
